"""Domain types shared by every estimator: datasets, basis specs, fits, reports.

A :class:`Dataset` is an immutable (outcome, treatment, covariate) triple,
optionally carrying the latent covariates of a simulation draw.  A
:class:`BasisSpec` is a declarative recipe turning a covariate row into a
feature vector with leading constant 1; :func:`design_matrix` evaluates it
column by column.  Everything here is pure and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

Z975 = 1.959963984540054  # norm.ppf(0.975)


class DataError(ValueError):
    """Raised for malformed datasets or dataset files."""


# registry for custom basis transforms (used by the simulation module to
# expose the analytic inverse of its covariate transformation)
_TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_basis_transform(tag: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    """Register a pure vectorized transform ``fn(source_matrix) -> (n,) column``.

    Registered tags become usable as ``("custom", tag)`` terms in a
    :class:`BasisSpec`.  Re-registering a tag overwrites it.
    """
    _TRANSFORMS[tag] = fn


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable study data: outcome ``y``, binary treatment ``t``, covariates ``x``.

    ``z`` holds the latent covariates of a simulation draw and is absent for
    real data.  Arm emptiness is checked at fit time, not here.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float).reshape(-1))
        t_arr = np.asarray(self.t, dtype=float).reshape(-1)
        if not np.all(np.isfinite(t_arr)) or not np.all(np.isin(t_arr, (0.0, 1.0))):
            raise DataError("treatment vector must contain only 0/1 entries")
        t = _readonly(t_arr.astype(int))
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        x = _readonly(x)
        if len(y) != len(t) or len(y) != x.shape[0]:
            raise DataError("y, t and x must have the same number of rows")
        if len(y) == 0:
            raise DataError("dataset must contain at least one unit")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            if z.ndim == 1:
                z = z.reshape(-1, 1)
            if z.shape[0] != len(y):
                raise DataError("z must have the same number of rows as y")
            object.__setattr__(self, "z", _readonly(z))

    @property
    def n(self) -> int:
        return len(self.y)

    def arm_counts(self) -> tuple[int, int]:
        n1 = int(self.t.sum())
        return len(self.t) - n1, n1

    def source(self, which: str) -> np.ndarray:
        """Return the ``"x"`` or ``"z"`` covariate matrix."""
        if which == "x":
            return self.x
        if which == "z":
            if self.z is None:
                raise DataError("dataset has no z (latent) covariates")
            return self.z
        raise ValueError(f"unknown covariate source {which!r}")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    fatal: tuple[str, ...]
    flags: tuple[str, ...]
    arm_counts: tuple[int, int]
    n: int

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "fatal": list(self.fatal),
            "flags": list(self.flags),
            "arm_counts": list(self.arm_counts),
            "n": self.n,
        }


def validate_dataset(ds: Dataset) -> ValidationReport:
    """Check a dataset for fatal defects and analysis hazards.

    Fatal entries: empty data, non-finite outcomes or covariates.  Flags
    (non-fatal): an empty treatment arm, a constant outcome, and a
    rank-deficiency hint for the covariate matrix.  Never mutates ``ds``.
    """
    fatal: list[str] = []
    flags: list[str] = []
    n = ds.n
    if n == 0:
        fatal.append("dataset is empty (n = 0)")
    bad_y = np.flatnonzero(~np.isfinite(ds.y))
    if bad_y.size:
        fatal.append(f"non-finite outcome at row {bad_y[0]} ({bad_y.size} rows total)")
    bad_x = np.flatnonzero(~np.isfinite(ds.x).all(axis=1))
    if bad_x.size:
        fatal.append(f"non-finite covariate at row {bad_x[0]} ({bad_x.size} rows total)")
    if ds.z is not None:
        bad_z = np.flatnonzero(~np.isfinite(ds.z).all(axis=1))
        if bad_z.size:
            fatal.append(f"non-finite latent covariate at row {bad_z[0]} ({bad_z.size} rows total)")
    n0, n1 = ds.arm_counts()
    if n > 0 and n1 == 0:
        flags.append("arm 1 empty")
    if n > 0 and n0 == 0:
        flags.append("arm 0 empty")
    if n > 0 and not bad_y.size and np.ptp(ds.y) == 0.0:
        flags.append("constant outcome")
    if n > 0 and not bad_x.size:
        design = np.column_stack([np.ones(n), ds.x])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            flags.append("covariate matrix (with intercept) is rank deficient")
    return ValidationReport(
        ok=not fatal, fatal=tuple(fatal), flags=tuple(flags), arm_counts=(n0, n1), n=n
    )


_TERM_KINDS = ("const", "raw", "power", "interaction", "custom")


@dataclass(frozen=True)
class BasisSpec:
    """Ordered recipe mapping a covariate row to a feature vector, first entry 1.

    Terms are tuples: ``("const",)``, ``("raw", j)``, ``("power", j, e)``,
    ``("interaction", j, k)``, ``("custom", tag)``.  Column indices are
    0-based; power exponents must be integers >= 1 so finite input always
    yields finite output.  ``source`` names the default covariate matrix
    ("x" observed, "z" latent) the spec is evaluated against.
    """

    terms: tuple[tuple, ...]
    source: str = "x"

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.terms)
        if not terms:
            raise ValueError("a BasisSpec needs at least the constant term")
        if terms[0] != ("const",):
            raise ValueError("the first term of a BasisSpec must be the constant 1")
        for term in terms:
            kind = term[0]
            if kind not in _TERM_KINDS:
                raise ValueError(f"unknown term kind {kind!r}")
            if kind == "raw":
                _check_col(term[1])
            elif kind == "power":
                _check_col(term[1])
                e = term[2]
                if not isinstance(e, (int, np.integer)) or isinstance(e, bool) or e < 1:
                    raise ValueError(
                        "power exponents must be integers >= 1 (fractional exponents "
                        "are rejected because negative bases would be non-finite)"
                    )
            elif kind == "interaction":
                _check_col(term[1])
                _check_col(term[2])
            elif kind == "custom":
                if not isinstance(term[1], str):
                    raise ValueError("custom terms carry a string tag")
        if self.source not in ("x", "z"):
            raise ValueError("source must be 'x' or 'z'")
        object.__setattr__(self, "terms", terms)

    @property
    def dimension(self) -> int:
        return len(self.terms)

    def max_column(self) -> int:
        """Largest 0-based column index referenced, -1 when none."""
        cols = [-1]
        for term in self.terms:
            if term[0] in ("raw", "power"):
                cols.append(term[1])
            elif term[0] == "interaction":
                cols.extend(term[1:3])
        return max(cols)

    def describe(self) -> str:
        parts = []
        letter = self.source
        for term in self.terms:
            if term[0] == "const":
                parts.append("1")
            elif term[0] == "raw":
                parts.append(f"{letter}{term[1] + 1}")
            elif term[0] == "power":
                parts.append(f"{letter}{term[1] + 1}^{term[2]}")
            elif term[0] == "interaction":
                parts.append(f"{letter}{term[1] + 1}*{letter}{term[2] + 1}")
            else:
                parts.append(f"<{term[1]}>")
        return " + ".join(parts)

    def to_dict(self) -> dict:
        return {"source": self.source, "terms": [list(t) for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(terms=tuple(tuple(t) for t in d["terms"]), source=d["source"])

    @classmethod
    def linear(cls, ncols: int, source: str = "x") -> "BasisSpec":
        """Constant plus the first ``ncols`` raw columns."""
        return cls(
            terms=(("const",),) + tuple(("raw", j) for j in range(ncols)), source=source
        )


def _check_col(j) -> None:
    if not isinstance(j, (int, np.integer)) or isinstance(j, bool) or j < 0:
        raise ValueError("column indices must be integers >= 0")


def evaluate_basis(spec: BasisSpec, rows: np.ndarray) -> np.ndarray:
    """Evaluate ``spec`` on a raw covariate matrix (one feature row per input row)."""
    src = np.asarray(rows, dtype=float)
    if src.ndim == 1:
        src = src.reshape(1, -1)
    if spec.max_column() >= src.shape[1]:
        raise DataError(
            f"spec references column {spec.max_column() + 1} but source has "
            f"only {src.shape[1]} columns"
        )
    cols = []
    for term in spec.terms:
        kind = term[0]
        if kind == "const":
            cols.append(np.ones(src.shape[0]))
        elif kind == "raw":
            cols.append(src[:, term[1]])
        elif kind == "power":
            cols.append(src[:, term[1]] ** term[2])
        elif kind == "interaction":
            cols.append(src[:, term[1]] * src[:, term[2]])
        else:
            try:
                fn = _TRANSFORMS[term[1]]
            except KeyError:
                raise ValueError(f"custom transform {term[1]!r} is not registered") from None
            cols.append(np.asarray(fn(src), dtype=float).reshape(-1))
    return np.column_stack(cols)


def design_matrix(ds: Dataset, spec: BasisSpec, source: Optional[str] = None) -> np.ndarray:
    """Evaluate ``spec`` on every row of the chosen covariate source.

    Returns the n x d matrix whose row i is the feature vector of unit i;
    column 1 is all ones.  Deterministic and pure.
    """
    return evaluate_basis(spec, ds.source(source if source is not None else spec.source))


@dataclass(frozen=True)
class FittedPropensity:
    """A fitted propensity model: coefficients and in-sample probabilities.

    ``link`` is "logit" for expit(alpha' q(x)) models and "wop" for the
    reciprocal-overlap parametrization; ``ext_design``/``extension`` carry the
    two data-dependent columns and their coefficients for the extended
    (single-iteration) variants, and ``arm`` marks arm-specific fits.
    """

    alpha: np.ndarray
    spec: BasisSpec
    fitted: np.ndarray
    link: str = "logit"
    extension: Optional[tuple[float, float]] = None
    ext_design: Optional[np.ndarray] = None
    arm: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", _readonly(np.asarray(self.alpha, dtype=float)))
        fitted = np.asarray(self.fitted, dtype=float)
        if np.any(fitted <= 0.0) or np.any(fitted >= 1.0):
            raise ValueError("fitted propensities must lie strictly in (0, 1)")
        object.__setattr__(self, "fitted", _readonly(fitted))
        if self.ext_design is not None:
            object.__setattr__(self, "ext_design", _readonly(self.ext_design))

    def arm_probability(self, t: int) -> np.ndarray:
        """pi_t(x) = pi(x)^t (1 - pi(x))^(1-t)."""
        return self.fitted if t == 1 else 1.0 - self.fitted


@dataclass(frozen=True)
class FittedOutcome:
    """Per-arm outcome regressions sharing one basis: coefficients and fits.

    ``m0``/``m1`` are the in-sample fitted means for the two arms; ``nr_phi``
    holds the extra coefficient on pi_t(x) for the NR variant, in which case
    ``pi`` references the propensity fit whose probabilities entered the
    design.
    """

    varsigma0: np.ndarray
    varsigma1: np.ndarray
    link: str
    spec: BasisSpec
    method: str
    m0: np.ndarray
    m1: np.ndarray
    nr_phi: Optional[tuple[float, float]] = None
    pi: Optional[FittedPropensity] = None

    def __post_init__(self):
        for name in ("varsigma0", "varsigma1", "m0", "m1"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))

    def arm_values(self, t: int) -> np.ndarray:
        return self.m1 if t == 1 else self.m0

    def gamma_values(self) -> np.ndarray:
        """Fitted effect function m1(x) - m0(x) at the sample points."""
        return self.m1 - self.m0


@dataclass(frozen=True)
class OverlapSummary:
    """Diagnostics on the fitted propensities; nothing is ever clamped."""

    eps: float
    arm0_min: float
    arm0_max: float
    arm1_min: float
    arm1_max: float
    n_below: int
    n_above: int
    max_weight: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "arm0_min": self.arm0_min,
            "arm0_max": self.arm0_max,
            "arm1_min": self.arm1_min,
            "arm1_max": self.arm1_max,
            "n_below_eps": self.n_below,
            "n_above_one_minus_eps": self.n_above,
            "max_weight": self.max_weight,
        }


def overlap_summary(pi: np.ndarray, t: np.ndarray, eps: float = 0.01) -> OverlapSummary:
    """Summarize propensity overlap by arm and count values outside [eps, 1-eps]."""
    pi = np.asarray(pi, dtype=float)
    t = np.asarray(t)
    p0, p1 = pi[t == 0], pi[t == 1]
    pi_t = np.where(t == 1, pi, 1.0 - pi)
    return OverlapSummary(
        eps=eps,
        arm0_min=float(p0.min()) if p0.size else float("nan"),
        arm0_max=float(p0.max()) if p0.size else float("nan"),
        arm1_min=float(p1.min()) if p1.size else float("nan"),
        arm1_max=float(p1.max()) if p1.size else float("nan"),
        n_below=int((pi < eps).sum()),
        n_above=int((pi > 1.0 - eps).sum()),
        max_weight=float((1.0 / pi_t).max()),
    )


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate with its variance, 95% Wald interval and diagnostics.

    ``variance`` is the estimate-scale variance (asymptotic variance of the
    sqrt(n)-scaled estimator divided by n).
    """

    tag: str
    estimate: float
    variance: float
    ci_lower: float
    ci_upper: float
    diagnostics: Optional[OverlapSummary] = None
    notes: tuple[str, ...] = ()

    @classmethod
    def from_variance(
        cls,
        tag: str,
        estimate: float,
        variance: float,
        diagnostics: Optional[OverlapSummary] = None,
        notes: Sequence[str] = (),
    ) -> "EstimateReport":
        if variance < 0:
            raise ValueError("variance must be nonnegative")
        half = Z975 * float(np.sqrt(variance))
        return cls(
            tag=tag,
            estimate=float(estimate),
            variance=float(variance),
            ci_lower=float(estimate - half),
            ci_upper=float(estimate + half),
            diagnostics=diagnostics,
            notes=tuple(notes),
        )

    def covers(self, value: float) -> bool:
        return self.ci_lower <= value <= self.ci_upper

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "estimate": self.estimate,
            "variance": self.variance,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None,
            "notes": list(self.notes),
        }


def read_dataset_csv(path) -> Dataset:
    """Read the dataset CSV format: header ``y,t,x1,...,xp[,z1,...,zq]``."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise DataError(f"{path}: empty file")
        names = [c.strip() for c in header.split(",")]
        if names[:2] != ["y", "t"]:
            raise DataError(f"{path}: header must start with 'y,t'")
        p = sum(1 for c in names if c.startswith("x"))
        q = sum(1 for c in names if c.startswith("z"))
        expected = ["y", "t"] + [f"x{i}" for i in range(1, p + 1)] + [f"z{i}" for i in range(1, q + 1)]
        if names != expected or p == 0:
            raise DataError(f"{path}: malformed header {header!r}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            vals = line.split(",")
            if len(vals) != len(names):
                raise DataError(f"{path}:{lineno}: expected {len(names)} fields, got {len(vals)}")
            if vals[1].strip() not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: t must be literally 0 or 1")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    z = data[:, 2 + p:] if q else None
    return Dataset(y=data[:, 0], t=data[:, 1].astype(int), x=data[:, 2 : 2 + p], z=z)


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write a dataset in the CSV format read by :func:`read_dataset_csv`."""
    p = ds.x.shape[1]
    q = ds.z.shape[1] if ds.z is not None else 0
    header = ["y", "t"] + [f"x{i}" for i in range(1, p + 1)] + [f"z{i}" for i in range(1, q + 1)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(ds.n):
            fields = [format(ds.y[i], ".17g"), str(int(ds.t[i]))]
            fields += [format(v, ".17g") for v in ds.x[i]]
            if q:
                fields += [format(v, ".17g") for v in ds.z[i]]
            fh.write(",".join(fields) + "\n")
