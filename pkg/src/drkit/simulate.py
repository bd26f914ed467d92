"""Kang-Schafer-style benchmark generator and Monte Carlo harness.

The data-generating process draws four standard-normal latent covariates Z,
assigns treatment with probability expit(-Z1 + 0.5 Z2 - 0.25 Z3 - 0.1 Z4),
and sets Y = gamma(Z) T + 210 + 27.4 Z1 + 13.7 (Z2 + Z3 + Z4) + noise.  The
observed covariates are the nonlinear transformation X = b(Z); fitting
working models linear in X instead of Z is what makes them misspecified.
Generated datasets keep Z alongside X so correct-model specs can read Z
directly without inverting b.

``run_replications`` evaluates a suite of estimators on a deterministic
stream of replicated draws and reduces them into bias/variance/MSE/coverage
summaries.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .core import (
    BasisSpec,
    Dataset,
    DataError,
    EstimateReport,
    register_basis_transform,
)
from .estimators import (
    IterFit,
    fit_pi_iter,
    fit_propensity,
    mu_bdr,
    mu_ht,
    mu_ipw,
    tau_bdr,
    tau_ht,
    tau_ipw,
)
from .semipar import fit_semipar, tau_from_semipar

PROPENSITY_COEF = np.array([-1.0, 0.5, -0.25, -0.1])
OUTCOME_COEF = np.array([27.4, 13.7, 13.7, 13.7])
OUTCOME_INTERCEPT = 210.0


@dataclass(frozen=True)
class DgpConfig:
    """Benchmark configuration: size, seed, effect function, noise scale.

    ``gamma`` is None for the null design (no treatment effect anywhere) or a
    tuple of coefficients (c0, c1, ..., c4) defining gamma(Z) = c0 + c'Z.
    """

    n: int
    seed: int
    gamma: Optional[tuple[float, ...]] = None
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.gamma is not None:
            g = tuple(float(v) for v in self.gamma)
            if len(g) != 5:
                raise ValueError("gamma takes 5 coefficients: intercept plus one per Z column")
            object.__setattr__(self, "gamma", g)


def gamma_values(cfg: DgpConfig, z: np.ndarray) -> np.ndarray:
    if cfg.gamma is None:
        return np.zeros(z.shape[0])
    g = np.asarray(cfg.gamma)
    return g[0] + z @ g[1:]


def true_tau(cfg: DgpConfig) -> float:
    """Population ATE implied by the effect coefficients (0 under the null)."""
    return 0.0 if cfg.gamma is None else float(cfg.gamma[0])


def true_mu(cfg: DgpConfig, arm: int) -> float:
    """Population mean of the potential outcome for an arm."""
    return OUTCOME_INTERCEPT + (true_tau(cfg) if arm == 1 else 0.0)


def true_propensity(z: np.ndarray) -> np.ndarray:
    """The generating propensity as a function of the latent covariates."""
    return expit(np.asarray(z, dtype=float) @ PROPENSITY_COEF)


def transform_b(z: np.ndarray) -> np.ndarray:
    """Observed-covariate transformation b(z), rows in / rows out."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zz = z.reshape(1, -1) if single else z
    x = np.column_stack(
        [
            np.exp(zz[:, 0] / 2.0),
            10.0 + zz[:, 1] / (1.0 + np.exp(zz[:, 0])),
            (zz[:, 0] * zz[:, 2] / 25.0 + 0.6) ** 3,
            (zz[:, 1] + zz[:, 3] + 20.0) ** 2,
        ]
    )
    return x[0] if single else x


def inverse_b(x: np.ndarray, z1_tol: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Analytic inverse of the covariate transformation.

    Returns ``(z, singular)``.  Recovery: z1 = 2 ln x1; z2 = (x2 - 10)(1 + x1^2)
    since exp(z1) = x1^2; z3 = 25 (cbrt(x3) - 0.6) / z1; z4 = sqrt(x4) - z2 - 20
    (nonnegative root).  Rows with |z1| below ``z1_tol`` are flagged singular
    (the z3 recovery divides by z1) and their z3 set to NaN.  Requires x1 > 0
    and x4 >= 0.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xx = x.reshape(1, -1) if single else x
    if np.any(xx[:, 0] <= 0.0):
        raise DataError("inverse transform requires x1 > 0")
    if np.any(xx[:, 3] < 0.0):
        raise DataError("inverse transform requires x4 >= 0")
    z1 = 2.0 * np.log(xx[:, 0])
    z2 = (xx[:, 1] - 10.0) * (1.0 + xx[:, 0] ** 2)
    singular = np.abs(z1) < z1_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        z3 = 25.0 * (np.cbrt(xx[:, 2]) - 0.6) / z1
    z3 = np.where(singular, np.nan, z3)
    z4 = np.sqrt(xx[:, 3]) - z2 - 20.0
    z = np.column_stack([z1, z2, z3, z4])
    return (z[0], singular[0]) if single else (z, singular)


# expose the inverse components as basis transforms so outcome/propensity
# specs written over the observed covariates can recover the latent ones
def _make_binv(j):
    def binv(x):
        z, _ = inverse_b(x)
        return z[:, j]

    return binv


for _j in range(4):
    register_basis_transform(f"binv{_j + 1}", _make_binv(_j))


def gen_dataset(cfg: DgpConfig, rep: Optional[int] = None) -> Dataset:
    """Draw one dataset; fully determined by (cfg.seed, rep).

    Draw order is fixed: Z, then the treatment uniforms, then the noise.
    ``rep`` selects an independent per-replication stream.
    """
    key = [cfg.seed] if rep is None else [cfg.seed, rep]
    rng = np.random.default_rng(key)
    z = rng.standard_normal((cfg.n, 4))
    pi = true_propensity(z)
    t = (rng.random(cfg.n) < pi).astype(int)
    eps = rng.standard_normal(cfg.n) * cfg.noise_sd
    y = gamma_values(cfg, z) * t + OUTCOME_INTERCEPT + z @ OUTCOME_COEF + eps
    if np.any(z[:, 1] + z[:, 3] + 20.0 < 0.0):
        warnings.warn(
            "draw contains rows with z2 + z4 + 20 < 0; the analytic inverse of the "
            "covariate transform would not recover them",
            UserWarning,
            stacklevel=2,
        )
    return Dataset(y=y, t=t, x=transform_b(z), z=z)


def z_linear_spec() -> BasisSpec:
    """Constant plus the four latent covariates (the correct working basis)."""
    return BasisSpec.linear(4, source="z")


def x_linear_spec() -> BasisSpec:
    """Constant plus the four observed covariates (misspecified working basis)."""
    return BasisSpec.linear(4, source="x")


# --- estimator suite factories ---------------------------------------------

EstimatorFn = Callable[[Dataset], Union[EstimateReport, float]]


def bdr_estimator(method: str, prop_spec: BasisSpec, out_spec: BasisSpec, **kw) -> EstimatorFn:
    def run(ds: Dataset):
        return tau_bdr(ds, method, prop_spec, out_spec, **kw)

    return run


def ipw_estimator(prop_spec: BasisSpec) -> EstimatorFn:
    def run(ds: Dataset):
        return tau_ipw(ds, prop_spec)

    return run


def ht_estimator(prop_spec: BasisSpec) -> EstimatorFn:
    def run(ds: Dataset):
        return tau_ht(ds, prop_spec)

    return run


def semipar_estimator(
    v_spec: BasisSpec,
    vdag_spec: BasisSpec,
    prop_spec: BasisSpec,
    weight: Union[str, np.ndarray] = "unit",
    c_tag: str = "identity",
) -> EstimatorFn:
    def run(ds: Dataset):
        fit = fit_semipar(ds, v_spec, vdag_spec, prop_spec, c_tag=c_tag)
        return tau_from_semipar(fit, weight=weight)

    return run


def arm_mean_estimator(
    kind: str, arm: int, prop_spec: BasisSpec, out_spec: Optional[BasisSpec] = None
) -> EstimatorFn:
    """Point-value arm-mean estimators (no interval): ipw, ht, iter-wls, iter-reg."""

    def run(ds: Dataset):
        if kind in ("ipw", "ht"):
            pi = fit_propensity(ds, prop_spec)
            return (mu_ipw if kind == "ipw" else mu_ht)(ds, pi, arm)
        variant = "ITER-WLS" if kind == "iter-wls" else "ITER-REG"
        it: IterFit = fit_pi_iter(ds, variant, prop_spec, out_spec)
        return mu_bdr(ds, it.outcome.arm_values(arm), it.pi_for_arm(arm), arm)

    return run


# --- replication harness ----------------------------------------------------

@dataclass(frozen=True)
class McRow:
    """Monte Carlo summary for one estimator."""

    estimator: str
    truth: float
    replications: int
    failures: int
    mc_mean: float
    mc_bias: float
    mc_variance: float
    mc_mse: float
    coverage: Optional[float]

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "truth": self.truth,
            "replications": self.replications,
            "failures": self.failures,
            "mc_mean": self.mc_mean,
            "mc_bias": self.mc_bias,
            "mc_variance": self.mc_variance,
            "mc_mse": self.mc_mse,
            "coverage": self.coverage,
        }


@dataclass(frozen=True)
class McSummary:
    """Per-estimator Monte Carlo summaries plus the raw estimate streams.

    ``mc_variance`` uses the 1/R normalization so that
    mse = bias^2 + variance holds exactly.
    """

    rows: tuple[McRow, ...]
    replications: int
    estimates: dict
    failures: tuple[tuple[int, str, str], ...]

    def row(self, name: str) -> McRow:
        for r in self.rows:
            if r.estimator == name:
                return r
        raise KeyError(name)

    def mc_se(self, name: str) -> float:
        """Monte Carlo standard error of the reported mean."""
        r = self.row(name)
        return math.sqrt(r.mc_variance / max(r.replications - r.failures, 1))

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "rows": [r.to_dict() for r in self.rows],
            "failures": [list(f) for f in self.failures],
        }

    def to_csv_text(self) -> str:
        header = "estimator,truth,replications,failures,mc_mean,mc_bias,mc_variance,mc_mse,coverage"
        lines = [header]
        for r in self.rows:
            cov = "" if r.coverage is None else format(r.coverage, ".17g")
            lines.append(
                ",".join(
                    [
                        r.estimator,
                        format(r.truth, ".17g"),
                        str(r.replications),
                        str(r.failures),
                        format(r.mc_mean, ".17g"),
                        format(r.mc_bias, ".17g"),
                        format(r.mc_variance, ".17g"),
                        format(r.mc_mse, ".17g"),
                        cov,
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def run_replications(
    cfg: DgpConfig,
    R: int,
    estimators: dict[str, EstimatorFn],
    truths: Optional[dict[str, float]] = None,
    threads: int = 1,
) -> McSummary:
    """Evaluate every estimator on R replicated draws of the benchmark.

    Replication r uses the stream derived from (cfg.seed, r); all estimators
    see the same datasets.  Estimator failures are recorded and excluded from
    the summaries, never silently dropped.  The default comparison truth is
    the population ATE implied by the effect coefficients; per-estimator
    truths (e.g. an arm mean) can be supplied via ``truths``.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    names = list(estimators)
    truths = truths or {}
    estimates = {name: np.full(R, np.nan) for name in names}
    covered = {name: np.zeros(R, dtype=bool) for name in names}
    has_ci = {name: False for name in names}
    failures: list[tuple[int, str, str]] = []

    def one_rep(rep: int):
        ds = gen_dataset(cfg, rep=rep)
        out = {}
        for name in names:
            try:
                out[name] = estimators[name](ds)
            except Exception as exc:  # recorded, not fatal
                out[name] = exc
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_rep, range(R)))
    else:
        results = [one_rep(rep) for rep in range(R)]

    for rep, out in enumerate(results):  # reduce in replication order
        for name in names:
            val = out[name]
            if isinstance(val, Exception):
                failures.append((rep, name, f"{type(val).__name__}: {val}"))
                continue
            if isinstance(val, EstimateReport):
                estimates[name][rep] = val.estimate
                truth = truths.get(name, true_tau(cfg))
                covered[name][rep] = val.covers(truth)
                has_ci[name] = True
            else:
                estimates[name][rep] = float(val)

    rows = []
    for name in names:
        vals = estimates[name]
        ok = np.isfinite(vals)
        good = vals[ok]
        truth = truths.get(name, true_tau(cfg))
        n_fail = int(R - ok.sum())
        mean = float(np.mean(good)) if good.size else float("nan")
        bias = mean - truth
        var = float(np.var(good)) if good.size else float("nan")
        mse = bias**2 + var
        cov = float(np.mean(covered[name][ok])) if has_ci[name] and ok.any() else None
        rows.append(
            McRow(
                estimator=name, truth=truth, replications=R, failures=n_fail,
                mc_mean=mean, mc_bias=bias, mc_variance=var, mc_mse=mse, coverage=cov,
            )
        )
    return McSummary(
        rows=tuple(rows), replications=R, estimates=estimates, failures=tuple(failures)
    )
