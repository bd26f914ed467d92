"""DR-grid model selection and sensitivity analysis.

Every cell (i, j) of the grid is the double-robust ATE estimate built from
the i-th candidate propensity model and the j-th candidate outcome model.  If
a propensity model is right, its whole row estimates the same quantity; if an
outcome model is right, so does its whole column.  The selection rules turn
that observation into criteria: pick the row/column with the smallest
dispersion (SD or range), the largest homogeneity-test p-value (Wald, with a
paired-bootstrap covariance), or the joint dispersion-plus-agreement score.
A 5-fold cross-validation baseline and the infeasible oracle are included for
benchmarking, and the grid itself doubles as an informal sensitivity matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import chi2

from .core import BasisSpec, Dataset, design_matrix
from .estimators import _mu_bdr
from .glm import DEFAULT_CONFIG, IwlsConfig, NumericError, fit_logistic_ml, fit_outcome

RULES = ("wald", "sd", "range", "joint", "cv", "oracle")


class SelectionError(RuntimeError):
    """No valid grid cell satisfies the rule."""


def default_prop_specs() -> tuple[BasisSpec, ...]:
    """Six nested working propensity models over the observed covariates.

    All deliberately misspecified for the benchmark (linear in X, not Z):
    {1,X1}, {1,X1,X2}, {1,X1..X3}, {1,X1..X4}, {1,X1..X4,squares},
    {1,X1..X4,pairwise interactions}.  User-overridable toolkit defaults.
    """
    specs = [BasisSpec.linear(m, source="x") for m in (1, 2, 3, 4)]
    squares = tuple(("power", j, 2) for j in range(4))
    specs.append(BasisSpec(terms=specs[3].terms + squares, source="x"))
    pairs = tuple(("interaction", i, j) for i in range(4) for j in range(i + 1, 4))
    specs.append(BasisSpec(terms=specs[3].terms + pairs, source="x"))
    return tuple(specs)


def default_out_specs() -> tuple[BasisSpec, ...]:
    """Four nested working outcome models over the observed covariates."""
    specs = [BasisSpec.linear(m, source="x") for m in (1, 2, 4)]
    squares = tuple(("power", j, 2) for j in range(4))
    specs.append(BasisSpec(terms=specs[2].terms + squares, source="x"))
    return tuple(specs)


@dataclass
class SelectionGrid:
    """The tau matrix over candidate propensity x outcome models."""

    prop_specs: tuple[BasisSpec, ...]
    out_specs: tuple[BasisSpec, ...]
    tau: np.ndarray
    failures: np.ndarray
    reasons: tuple[tuple[Optional[str], ...], ...]
    n: int
    dr_method: str
    cell_warnings: tuple[tuple[int, ...], ...]
    prop_alphas: Optional[tuple[Optional[np.ndarray], ...]] = None
    boot_cov: Optional[np.ndarray] = None
    boot_replicates: Optional[int] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.tau.shape

    def valid(self) -> np.ndarray:
        return ~self.failures

    def _dispersion(self, axis: int, fn) -> np.ndarray:
        out = []
        mat = self.tau if axis == 0 else self.tau.T
        mask = self.valid() if axis == 0 else self.valid().T
        for vals, ok in zip(mat, mask):
            v = vals[ok]
            out.append(fn(v) if v.size >= 2 else np.nan)
        return np.asarray(out)

    def row_sds(self) -> np.ndarray:
        return self._dispersion(0, lambda v: float(np.std(v, ddof=1)))

    def col_sds(self) -> np.ndarray:
        return self._dispersion(1, lambda v: float(np.std(v, ddof=1)))

    def row_ranges(self) -> np.ndarray:
        return self._dispersion(0, lambda v: float(np.ptp(v)))

    def col_ranges(self) -> np.ndarray:
        return self._dispersion(1, lambda v: float(np.ptp(v)))

    def row_means(self) -> np.ndarray:
        return self._dispersion(0, lambda v: float(np.mean(v)))

    def col_means(self) -> np.ndarray:
        return self._dispersion(1, lambda v: float(np.mean(v)))

    def to_dict(self) -> dict:
        tau = [
            [None if self.failures[i, j] else float(self.tau[i, j]) for j in range(self.shape[1])]
            for i in range(self.shape[0])
        ]
        return {
            "n": self.n,
            "dr_method": self.dr_method,
            "prop_specs": [s.to_dict() for s in self.prop_specs],
            "out_specs": [s.to_dict() for s in self.out_specs],
            "tau": tau,
            "failures": [[bool(v) for v in row] for row in self.failures],
            "reasons": [list(row) for row in self.reasons],
            "cell_warnings": [list(row) for row in self.cell_warnings],
            "row_sd": _nan_to_none(self.row_sds()),
            "col_sd": _nan_to_none(self.col_sds()),
            "row_range": _nan_to_none(self.row_ranges()),
            "col_range": _nan_to_none(self.col_ranges()),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionGrid":
        failures = np.asarray(d["failures"], dtype=bool)
        tau = np.asarray(
            [[np.nan if v is None else float(v) for v in row] for row in d["tau"]], dtype=float
        )
        return cls(
            prop_specs=tuple(BasisSpec.from_dict(s) for s in d["prop_specs"]),
            out_specs=tuple(BasisSpec.from_dict(s) for s in d["out_specs"]),
            tau=tau,
            failures=failures,
            reasons=tuple(tuple(row) for row in d["reasons"]),
            n=int(d["n"]),
            dr_method=d["dr_method"],
            cell_warnings=tuple(tuple(int(v) for v in row) for row in d["cell_warnings"]),
        )

    def equals(self, other: "SelectionGrid") -> bool:
        return (
            self.prop_specs == other.prop_specs
            and self.out_specs == other.out_specs
            and np.array_equal(self.tau, other.tau, equal_nan=True)
            and np.array_equal(self.failures, other.failures)
            and self.reasons == other.reasons
            and self.cell_warnings == other.cell_warnings
            and self.n == other.n
            and self.dr_method == other.dr_method
        )


def _nan_to_none(arr: np.ndarray) -> list:
    return [None if not np.isfinite(v) else float(v) for v in arr]


@dataclass(frozen=True)
class SelectionOutcome:
    """A rule's chosen cell, its estimate, and the rule-specific score table."""

    rule: str
    i: int
    j: int
    tau: float
    scores: dict
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "i": self.i,
            "j": self.j,
            "tau": self.tau,
            "scores": self.scores,
            "notes": list(self.notes),
        }


def _grid_cells(y, t, prop_designs, out_designs, dr_method, cfg, prop_inits=None):
    """Fit the whole grid once from precomputed designs.

    Returns (tau, failed, reasons, warn counts, alphas).
    """
    I, J = len(prop_designs), len(out_designs)
    tau = np.full((I, J), np.nan)
    failed = np.ones((I, J), dtype=bool)
    reasons: list[list[Optional[str]]] = [[None] * J for _ in range(I)]
    nwarn = np.zeros((I, J), dtype=int)
    alphas: list[Optional[np.ndarray]] = [None] * I

    t0, t1 = (t == 0).astype(float), (t == 1).astype(float)
    for i, pdesign in enumerate(prop_designs):
        init = None if prop_inits is None else prop_inits[i]
        try:
            with warnings.catch_warnings(record=True) as wlog:
                warnings.simplefilter("always")
                alpha = fit_logistic_ml(pdesign, t, cfg, init=init)
            row_warn = len(wlog)
        except Exception as exc:
            for j in range(J):
                reasons[i][j] = f"propensity fit failed: {type(exc).__name__}: {exc}"
            continue
        alphas[i] = alpha
        pi = np.clip(expit(pdesign @ alpha), np.finfo(float).tiny, 1.0 - 1e-16)
        w1, w0 = t1 / pi, t0 / (1.0 - pi)
        for j, X in enumerate(out_designs):
            try:
                with warnings.catch_warnings(record=True) as wlog:
                    warnings.simplefilter("always")
                    if dr_method == "WLS":
                        m1 = X @ fit_outcome(X, y, w1, "identity", cfg)
                        m0 = X @ fit_outcome(X, y, w0, "identity", cfg)
                    elif dr_method == "REG":
                        m1 = X @ fit_outcome(X, y, t1, "identity", cfg)
                        m0 = X @ fit_outcome(X, y, t0, "identity", cfg)
                    elif dr_method == "NR":
                        X1 = np.column_stack([X, pi])
                        X0 = np.column_stack([X, 1.0 - pi])
                        m1 = X1 @ fit_outcome(X1, y, w1, "identity", cfg)
                        m0 = X0 @ fit_outcome(X0, y, w0, "identity", cfg)
                    else:
                        raise ValueError(f"unsupported grid DR method {dr_method!r}")
                    cell = _mu_bdr(y, t, m1, pi, 1) - _mu_bdr(y, t, m0, pi, 0)
                nwarn[i, j] = row_warn + len(wlog)
                if not np.isfinite(cell):
                    raise NumericError("non-finite cell estimate")
                tau[i, j] = cell
                failed[i, j] = False
            except Exception as exc:
                reasons[i][j] = f"{type(exc).__name__}: {exc}"
    return tau, failed, reasons, nwarn, alphas


def build_grid(
    ds: Dataset,
    prop_specs: Sequence[BasisSpec],
    out_specs: Sequence[BasisSpec],
    dr_method: str = "WLS",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> SelectionGrid:
    """Fit every (propensity, outcome) candidate pair and collect the tau matrix.

    Failed fits are masked with a reason; only a fully failed grid raises.
    """
    prop_specs, out_specs = tuple(prop_specs), tuple(out_specs)
    if len(prop_specs) < 2 or len(out_specs) < 2:
        raise ValueError("the grid needs at least two specs per axis")
    tau, failed, reasons, nwarn, alphas = _grid_cells(
        ds.y,
        ds.t,
        [design_matrix(ds, s) for s in prop_specs],
        [design_matrix(ds, s) for s in out_specs],
        dr_method,
        cfg,
    )
    if failed.all():
        raise NumericError("every grid cell failed to fit")
    return SelectionGrid(
        prop_specs=prop_specs,
        out_specs=out_specs,
        tau=tau,
        failures=failed,
        reasons=tuple(tuple(r) for r in reasons),
        n=ds.n,
        dr_method=dr_method,
        cell_warnings=tuple(tuple(int(v) for v in row) for row in nwarn),
        prop_alphas=tuple(alphas),
    )


def attach_bootstrap_covariance(
    ds: Dataset,
    grid: SelectionGrid,
    B: int = 200,
    seed: int = 0,
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> SelectionGrid:
    """Nonparametric paired-bootstrap covariance of the vectorized grid.

    Units are resampled with replacement and every cell recomputed (warm
    started from the full-data propensity fits); the covariance of the
    vectorized tau matrix across replicates is stored on the grid.
    Bootstrap replicates containing failed cells are dropped with a count.
    """
    rng = np.random.default_rng([seed, 101])
    I, J = grid.shape
    # a resampled unit's feature rows are the original rows: index, don't rebuild
    prop_designs = [design_matrix(ds, s) for s in grid.prop_specs]
    out_designs = [design_matrix(ds, s) for s in grid.out_specs]
    vecs = []
    dropped = 0
    for _ in range(B):
        idx = rng.integers(0, ds.n, ds.n)
        tb = ds.t[idx]
        if tb.min() == tb.max():
            dropped += 1
            continue
        tau, failed, *_ = _grid_cells(
            ds.y[idx],
            tb,
            [d[idx] for d in prop_designs],
            [d[idx] for d in out_designs],
            grid.dr_method,
            cfg,
            prop_inits=grid.prop_alphas,
        )
        if failed.any():
            dropped += 1
            continue
        vecs.append(tau.reshape(-1))
    if len(vecs) < max(I * J + 1, 10):
        raise NumericError(
            f"too few successful bootstrap replicates ({len(vecs)}/{B}) for a covariance"
        )
    arr = np.asarray(vecs)
    grid.boot_cov = np.cov(arr, rowvar=False, ddof=1)
    grid.boot_replicates = len(vecs)
    if dropped:
        warnings.warn(f"{dropped} bootstrap replicates dropped", UserWarning, stacklevel=2)
    return grid


def _argmin_with_ties(values: np.ndarray) -> int:
    # np.nanargmin picks the first minimum: smallest index, most parsimonious
    if np.all(~np.isfinite(values)):
        raise SelectionError("no axis with at least two valid cells")
    return int(np.nanargmin(values))


def _chosen(grid: SelectionGrid, rule: str, i: int, j: int, scores: dict, notes=()) -> SelectionOutcome:
    if grid.failures[i, j]:
        raise SelectionError(f"rule {rule} selected failed cell ({i}, {j})")
    return SelectionOutcome(
        rule=rule, i=i, j=j, tau=float(grid.tau[i, j]), scores=scores, notes=tuple(notes)
    )


def select_sd(grid: SelectionGrid) -> SelectionOutcome:
    """Smallest row SD picks the propensity model, smallest column SD the outcome model."""
    row, col = grid.row_sds(), grid.col_sds()
    i, j = _argmin_with_ties(row), _argmin_with_ties(col)
    return _chosen(grid, "sd", i, j, {"row_sd": _nan_to_none(row), "col_sd": _nan_to_none(col)})


def select_range(grid: SelectionGrid) -> SelectionOutcome:
    """As select_sd with the range replacing the standard deviation."""
    row, col = grid.row_ranges(), grid.col_ranges()
    i, j = _argmin_with_ties(row), _argmin_with_ties(col)
    return _chosen(
        grid, "range", i, j, {"row_range": _nan_to_none(row), "col_range": _nan_to_none(col)}
    )


def _wald_pvalue(vals: np.ndarray, cov: np.ndarray) -> tuple[float, int, bool]:
    """Homogeneity test: first valid entry against the rest."""
    m = len(vals)
    if m < 2:
        return float("nan"), 0, False
    C = np.zeros((m - 1, m))
    C[:, 0] = 1.0
    C[np.arange(m - 1), np.arange(1, m)] = -1.0
    delta = C @ vals
    vc = C @ cov @ C.T
    rank = int(np.linalg.matrix_rank(vc))
    pinv_used = rank < m - 1
    stat = float(delta @ np.linalg.pinv(vc) @ delta)
    dof = max(rank, 1)
    return float(chi2.sf(stat, dof)), dof, pinv_used


def select_wald(grid: SelectionGrid, covariance: Optional[np.ndarray] = None) -> SelectionOutcome:
    """Largest homogeneity-test p-value per axis (bootstrap covariance).

    Row i is tested for equality of its J cell limits (chi-square with J-1
    degrees of freedom, fewer when the contrast covariance is singular and a
    pseudo-inverse is used); symmetrically for columns.
    """
    cov = covariance if covariance is not None else grid.boot_cov
    if cov is None:
        raise SelectionError("wald selection needs a bootstrap covariance (attach it first)")
    I, J = grid.shape
    notes = []
    row_p = np.full(I, np.nan)
    for i in range(I):
        ok = np.flatnonzero(grid.valid()[i])
        if ok.size < 2:
            continue
        idx = i * J + ok
        p, dof, pinv_used = _wald_pvalue(grid.tau[i, ok], cov[np.ix_(idx, idx)])
        row_p[i] = p
        if pinv_used:
            notes.append(f"row {i}: singular contrast covariance, dof={dof}")
    col_p = np.full(J, np.nan)
    for j in range(J):
        ok = np.flatnonzero(grid.valid()[:, j])
        if ok.size < 2:
            continue
        idx = ok * J + j
        p, dof, pinv_used = _wald_pvalue(grid.tau[ok, j], cov[np.ix_(idx, idx)])
        col_p[j] = p
        if pinv_used:
            notes.append(f"column {j}: singular contrast covariance, dof={dof}")
    if np.all(~np.isfinite(row_p)) or np.all(~np.isfinite(col_p)):
        raise SelectionError("no testable rows/columns for the wald rule")
    i = int(np.nanargmax(row_p))
    j = int(np.nanargmax(col_p))
    return _chosen(
        grid, "wald", i, j,
        {"row_pvalues": _nan_to_none(row_p), "col_pvalues": _nan_to_none(col_p)},
        notes,
    )


def select_joint(grid: SelectionGrid, c: float = 0.0) -> SelectionOutcome:
    """Minimize row SD + column SD + c |row mean - column mean| over cells.

    c = 0 reduces exactly to the separate SD selection.
    """
    if c < 0:
        raise ValueError("c must be >= 0")
    row_sd, col_sd = grid.row_sds(), grid.col_sds()
    row_mean, col_mean = grid.row_means(), grid.col_means()
    I, J = grid.shape
    score = np.full((I, J), np.inf)
    for i in range(I):
        for j in range(J):
            if grid.failures[i, j] or not np.isfinite(row_sd[i]) or not np.isfinite(col_sd[j]):
                continue
            score[i, j] = row_sd[i] + col_sd[j] + c * abs(row_mean[i] - col_mean[j])
    if not np.isfinite(score).any():
        raise SelectionError("no valid cell for the joint rule")
    flat = int(np.argmin(score))  # row-major: ties break to the smaller (i, j)
    i, j = divmod(flat, J)
    return _chosen(
        grid, "joint", i, j,
        {"c": c, "score": [[None if not np.isfinite(v) else float(v) for v in r] for r in score]},
    )


def _stratified_folds(t: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded permutation within each arm, dealt round-robin into folds."""
    assign = np.empty(len(t), dtype=int)
    for arm in (0, 1):
        idx = np.flatnonzero(t == arm)
        idx = rng.permutation(idx)
        assign[idx] = np.arange(len(idx)) % folds
    return assign


def select_cv(
    ds: Dataset,
    prop_specs: Sequence[BasisSpec],
    out_specs: Sequence[BasisSpec],
    folds: int = 5,
    seed: int = 0,
    grid: Optional[SelectionGrid] = None,
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> SelectionOutcome:
    """Cross-validation baseline.

    The propensity spec minimizes the cross-validated minus log-likelihood of
    T; the outcome spec minimizes the cross-validated squared error of Y with
    the arms fit separately and errors pooled.  Folds are stratified by arm;
    a fold leaving an arm empty triggers one reshuffle, then failure.
    """
    prop_specs, out_specs = tuple(prop_specs), tuple(out_specs)
    if folds < 2 or ds.n < folds:
        raise ValueError("need 2 <= folds <= n")
    t = ds.t
    prop_designs = [design_matrix(ds, s) for s in prop_specs]
    out_designs = [design_matrix(ds, s) for s in out_specs]

    for attempt in range(2):
        rng = np.random.default_rng([seed, 7 + attempt])
        assign = _stratified_folds(t, folds, rng)
        ok = all(
            (t[assign != f] == 0).any() and (t[assign != f] == 1).any() for f in range(folds)
        )
        if ok:
            break
    else:
        raise SelectionError("could not build folds with both arms in every training set")

    prop_loss = np.zeros(len(prop_specs))
    out_loss = np.zeros(len(out_specs))
    for f in range(folds):
        train, test = assign != f, assign == f
        if not test.any():
            continue
        for a, X in enumerate(prop_designs):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    alpha = fit_logistic_ml(X[train], t[train], cfg)
                eta = X[test] @ alpha
                # minus log-likelihood of the held-out treatments
                prop_loss[a] += float(np.sum(np.logaddexp(0.0, eta) - t[test] * eta))
            except Exception:
                prop_loss[a] = np.inf
        for b, X in enumerate(out_designs):
            try:
                err = 0.0
                for arm in (0, 1):
                    tr = train & (t == arm)
                    te = test & (t == arm)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        coef = fit_outcome(X[tr], ds.y[tr], np.ones(tr.sum()), "identity", cfg)
                    if te.any():
                        err += float(np.sum((ds.y[te] - X[te] @ coef) ** 2))
                out_loss[b] += err
            except Exception:
                out_loss[b] = np.inf
    if not np.isfinite(prop_loss).any() or not np.isfinite(out_loss).any():
        raise SelectionError("cross-validation failed for every candidate spec")
    i = int(np.argmin(prop_loss))
    j = int(np.argmin(out_loss))
    scores = {"prop_loss": _nan_to_none(prop_loss), "out_loss": _nan_to_none(out_loss)}
    if grid is not None and not grid.failures[i, j]:
        return SelectionOutcome(rule="cv", i=i, j=j, tau=float(grid.tau[i, j]), scores=scores)
    # evaluate the chosen cell fresh
    pi = np.clip(
        expit(prop_designs[i] @ fit_logistic_ml(prop_designs[i], t, cfg)),
        np.finfo(float).tiny, 1.0 - 1e-16,
    )
    X = out_designs[j]
    m1 = X @ fit_outcome(X, ds.y, (t == 1) / pi, "identity", cfg)
    m0 = X @ fit_outcome(X, ds.y, (t == 0) / (1.0 - pi), "identity", cfg)
    tau = _mu_bdr(ds.y, t, m1, pi, 1) - _mu_bdr(ds.y, t, m0, pi, 0)
    return SelectionOutcome(rule="cv", i=i, j=j, tau=float(tau), scores=scores)


def oracle(grid: SelectionGrid, tau_true: float) -> SelectionOutcome:
    """Infeasible benchmark: the cell closest to the true ATE (simulation only)."""
    dist = np.where(grid.valid(), np.abs(grid.tau - tau_true), np.inf)
    if not np.isfinite(dist).any():
        raise SelectionError("no valid cell for the oracle")
    flat = int(np.argmin(dist))
    i, j = divmod(flat, grid.shape[1])
    return _chosen(grid, "oracle", i, j, {"tau_true": tau_true})


@dataclass(frozen=True)
class SensitivityReport:
    text: str
    data: dict


def sensitivity_report(grid: SelectionGrid) -> SensitivityReport:
    """The full tau matrix with row/column dispersion, human- and machine-readable."""
    I, J = grid.shape
    col_names = [f"out{j + 1}" for j in range(J)]
    width = 12
    lines = []
    header = "".ljust(14) + "".join(c.rjust(width) for c in col_names)
    lines.append(header + "row_sd".rjust(width) + "row_range".rjust(width))
    row_sd, col_sd = grid.row_sds(), grid.col_sds()
    row_rg, col_rg = grid.row_ranges(), grid.col_ranges()
    for i in range(I):
        cells = [
            "FAIL".rjust(width) if grid.failures[i, j] else f"{grid.tau[i, j]:.4f}".rjust(width)
            for j in range(J)
        ]
        tail = f"{row_sd[i]:.4f}".rjust(width) + f"{row_rg[i]:.4f}".rjust(width)
        lines.append(f"prop{i + 1}".ljust(14) + "".join(cells) + tail)
    lines.append(
        "col_sd".ljust(14) + "".join(f"{v:.4f}".rjust(width) for v in col_sd)
    )
    lines.append(
        "col_range".ljust(14) + "".join(f"{v:.4f}".rjust(width) for v in col_rg)
    )
    lines.append("")
    for i, s in enumerate(grid.prop_specs):
        lines.append(f"prop{i + 1}: {s.describe()}")
    for j, s in enumerate(grid.out_specs):
        lines.append(f"out{j + 1}: {s.describe()}")
    return SensitivityReport(text="\n".join(lines) + "\n", data=grid.to_dict())
