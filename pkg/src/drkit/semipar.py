"""Semiparametric effect-modification estimation.

Fits the additive effect model gamma(x) = beta' v^d(x) jointly with the
working regression E{Y - T beta'V | X} = theta' v^k(X), solving the stacked
estimating equations

    S1 = V  {H(beta) - theta'Vdag} {T - pi(X; alpha)}
    S2 = Vdag {H(beta) - theta'Vdag}
    S3 = propensity score

with H(beta) = Y - T beta'V.  ``beta`` has a closed form built from
sample-level residual projections on the span of Vdag; the estimator has
bounded influence because the propensity only enters through T - pi(X).
Also provides the reciprocal-overlap propensity parametrization under which,
for d = k, the fitted mean of beta'V coincides exactly with an augmented
imputation estimator of the ATE.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    BasisSpec,
    Dataset,
    DataError,
    EstimateReport,
    FittedPropensity,
    design_matrix,
    evaluate_basis,
    overlap_summary,
)
from .glm import (
    DEFAULT_CONFIG,
    IwlsConfig,
    NumericError,
    solve_normal_equations,
)

_COND_LIMIT = 1e12


def residual_projection(w: np.ndarray, vdag: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Residual of ``w`` from its sample least-squares projection on the columns of ``vdag``.

    Column j of the result is ``w_j - P_n(w vdag') P_n(vdag vdag')^{-1} vdag_j``;
    idempotent, and annihilates anything already in the span of ``vdag``.
    Accepts a vector or an (n, m) matrix (projected column by column).
    """
    vdag = np.asarray(vdag, dtype=float)
    w = np.asarray(w, dtype=float)
    n = vdag.shape[0]
    gram = vdag.T @ vdag / n
    cross = vdag.T @ w / n
    coef = solve_normal_equations(gram, cross, ridge)
    return w - vdag @ coef


@dataclass(frozen=True)
class SemiparFit:
    """Joint fit (beta, theta, alpha) of the effect model and working regression."""

    beta: np.ndarray
    theta: np.ndarray
    propensity: FittedPropensity
    v_spec: BasisSpec
    vdag_spec: BasisSpec
    c_tag: str
    V: np.ndarray
    Vdag: np.ndarray
    ds: Dataset
    ee_s1_norm: float
    ee_s2_norm: float

    def h_values(self) -> np.ndarray:
        """H(beta) = Y - T beta'V at the sample points."""
        return self.ds.y - self.ds.t * (self.V @ self.beta)

    def ee_residual(self) -> np.ndarray:
        """H(beta) - theta'Vdag, the residual entering S1 and S2."""
        return self.h_values() - self.Vdag @ self.theta


def _check_nested(v_spec: BasisSpec, vdag_spec: BasisSpec) -> None:
    if v_spec.source != vdag_spec.source:
        raise ValueError("v_spec and vdag_spec must read the same covariate source")
    if vdag_spec.dimension < v_spec.dimension:
        raise ValueError("vdag_spec must have dimension k >= d")
    missing = [t for t in v_spec.terms if t not in vdag_spec.terms]
    if missing:
        raise ValueError(f"v_spec terms {missing} are not part of vdag_spec (V must be a subvector of Vdag)")


def _solve_general(A: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericError(f"singular {what} system (condition estimate {cond:.3e})")
    return np.linalg.solve(A, rhs)


def fit_semipar(
    ds: Dataset,
    v_spec: BasisSpec,
    vdag_spec: BasisSpec,
    prop_spec: Optional[BasisSpec] = None,
    c_tag: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
    propensity: Optional[FittedPropensity] = None,
    c_values: Optional[np.ndarray] = None,
) -> SemiparFit:
    """Fit (beta, theta) given an ML propensity fit.

    ``c_tag`` selects the weighting of the first estimating equation:
    "identity" uses the closed form for beta (locally efficient under
    homoscedasticity when both working models hold); "inverse-omega"
    premultiplies S1 by 1/{pi_hat(1-pi_hat)} and solves the stacked linear
    system, which trades variance for less model extrapolation.  "custom"
    accepts raw per-unit weights through ``c_values`` ((n,) scalars or
    (n, d, d) matrices) with no optimality guarantees.
    """
    from .estimators import fit_propensity  # cycle-free at call time

    _check_nested(v_spec, vdag_spec)
    for t in (0, 1):
        if not np.any(ds.t == t):
            raise DataError(f"treatment arm {t} is empty")
    V = design_matrix(ds, v_spec)
    Vdag = design_matrix(ds, vdag_spec)
    n, d = V.shape
    if propensity is None:
        if prop_spec is None:
            raise ValueError("either prop_spec or a fitted propensity is required")
        propensity = fit_propensity(ds, prop_spec, cfg)
    resid_t = ds.t - propensity.fitted

    if c_tag == "identity" and c_values is None:
        # closed form: beta from residual projections off the span of Vdag
        proj_tv = residual_projection(ds.t[:, None] * V, Vdag, cfg.ridge)
        proj_y = residual_projection(ds.y, Vdag, cfg.ridge)
        lhs = (V * resid_t[:, None]).T @ proj_tv / n
        rhs = (V * resid_t[:, None]).T @ proj_y / n
        beta = _solve_general(lhs, rhs, "effect-coefficient")
        gram = Vdag.T @ Vdag / n
        h = ds.y - ds.t * (V @ beta)
        theta = solve_normal_equations(gram, Vdag.T @ h / n, cfg.ridge)
    else:
        if c_tag == "inverse-omega":
            if c_values is not None:
                raise ValueError("c_values is only for c_tag='custom'")
            c = 1.0 / (propensity.fitted * (1.0 - propensity.fitted))
        elif c_tag == "custom":
            if c_values is None:
                raise ValueError("c_tag='custom' requires c_values")
            c = np.asarray(c_values, dtype=float)
        else:
            raise ValueError(f"unknown c_tag {c_tag!r}")
        # S1 rows premultiplied by c(X); the system stays linear in (beta, theta)
        if c.ndim == 1:
            cV = V * c[:, None]
        elif c.shape == (n, d, d):
            cV = np.einsum("nij,nj->ni", c, V)
        else:
            raise ValueError("c_values must have shape (n,) or (n, d, d)")
        r1 = cV * resid_t[:, None]
        m11 = r1.T @ (ds.t[:, None] * V) / n
        m12 = r1.T @ Vdag / n
        rhs1 = r1.T @ ds.y / n
        m21 = Vdag.T @ (ds.t[:, None] * V) / n
        m22 = Vdag.T @ Vdag / n
        rhs2 = Vdag.T @ ds.y / n
        big = np.block([[m11, m12], [m21, m22]])
        sol = _solve_general(big, np.concatenate([rhs1, rhs2]), "stacked weighted")
        beta, theta = sol[:d], sol[d:]

    resid = (ds.y - ds.t * (V @ beta)) - Vdag @ theta
    s1 = float(np.max(np.abs((V * resid_t[:, None]).T @ resid / n)))
    s2 = float(np.max(np.abs(Vdag.T @ resid / n)))
    return SemiparFit(
        beta=beta, theta=theta, propensity=propensity,
        v_spec=v_spec, vdag_spec=vdag_spec,
        c_tag=c_tag if c_values is None else "custom",
        V=V, Vdag=Vdag, ds=ds, ee_s1_norm=s1, ee_s2_norm=s2,
    )


def gamma_hat(fit: SemiparFit, x_row: np.ndarray) -> float:
    """Fitted effect function beta' v^d(x) at a covariate row."""
    return float(evaluate_basis(fit.v_spec, np.asarray(x_row)) @ fit.beta)


def tau_from_semipar(
    fit: SemiparFit,
    weight: Union[str, np.ndarray] = "unit",
    eps: float = 0.01,
) -> EstimateReport:
    """Weighted average treatment effect ``P_n{w V}' beta / P_n{w}``.

    ``weight`` is "unit" (the population/sample ATE), "omega-op-hat" (the
    overlap-weighted contrast, using the plug-in pi_hat(1-pi_hat)), or a raw
    nonnegative per-unit vector.  The variance comes from the stacked
    M-estimation sandwich.
    """
    from .variance import sandwich, weighted_mean_influence

    notes: tuple[str, ...] = ()
    if isinstance(weight, str):
        if weight == "unit":
            w = np.ones(fit.ds.n)
            tag = "semipar"
        elif weight == "omega-op-hat":
            w = fit.propensity.fitted * (1.0 - fit.propensity.fitted)
            tag = "semipar-wop"
            notes = ("omega_op weights are plug-in estimates",)
        else:
            raise ValueError(f"unknown weight {weight!r}")
    else:
        w = np.asarray(weight, dtype=float)
        if np.any(w < 0):
            raise ValueError("custom weights must be nonnegative")
        if not np.any(w > 0):
            raise ValueError("custom weights must not all be zero")
        tag = "semipar-custom"
        notes = ("custom weights: plug-in influence, no optimality guarantees",)
    gamma_vals = fit.V @ fit.beta
    est = float(np.sum(w * gamma_vals) / np.sum(w))
    pieces = sandwich(fit.ds, fit)
    infl = weighted_mean_influence(fit, pieces, w)
    var = float(np.var(infl)) / fit.ds.n
    return EstimateReport.from_variance(
        tag=tag, estimate=est, variance=var,
        diagnostics=overlap_summary(fit.propensity.fitted, fit.ds.t, eps),
        notes=notes,
    )


# --- reciprocal-overlap propensity parametrization ------------------------

def wop_probabilities(u: np.ndarray) -> np.ndarray:
    """pi = (1/2){1 + sqrt(1 - 4/u)} so that pi(1-pi) = 1/u; needs u > 4."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 4.0):
        raise NumericError("reciprocal-overlap linear predictor must exceed 4 everywhere")
    return 0.5 * (1.0 + np.sqrt(1.0 - 4.0 / u))


class WopInfeasibleError(NumericError):
    """The overlap-parametrized fit pinned the feasibility boundary."""


def fit_wop_propensity(
    ds: Dataset,
    spec: BasisSpec,
    barrier: float = 1e-3,
    max_iter: int = 200,
    tol: float = 1e-10,
) -> FittedPropensity:
    """ML fit of the model 1/{pi(x)(1-pi(x))} = alpha' v(x).

    Maximizes the Bernoulli likelihood by Fisher scoring on a log-barrier
    objective that keeps alpha'v(x_i) > 4 at every sample point, so returned
    fits always satisfy the constraint (the model forces pi >= 1/2, and any
    untreated unit at the minimum of alpha'v pulls the likelihood toward the
    boundary; the barrier is what keeps the solution interior).  ``barrier``
    trades likelihood fidelity for boundary clearance.  Solves that still end
    on the boundary within floating-point noise are reported via
    :class:`WopInfeasibleError`, never silently repaired.
    """
    V = design_matrix(ds, spec)
    n = V.shape[0]
    t = ds.t.astype(float)
    alpha = np.zeros(V.shape[1])
    alpha[0] = 8.0  # interior start: constant overlap weight 1/8
    u = V @ alpha
    if np.any(u <= 4.0):
        raise WopInfeasibleError("no interior starting point (is the first column constant?)")

    def objective(uu):
        pi = wop_probabilities(uu)
        ll = np.sum(t * np.log(pi) + (1.0 - t) * np.log(1.0 - pi))
        return -ll / n - barrier * np.sum(np.log(uu - 4.0)) / n

    f = objective(u)
    for _ in range(max_iter):
        pi = wop_probabilities(u)
        s = np.sqrt(1.0 - 4.0 / u)
        s = np.maximum(s, 1e-12)
        grad = -(V.T @ ((t - pi) / (s * u))) / n - barrier * (V.T @ (1.0 / (u - 4.0))) / n
        # Fisher information of the likelihood part plus exact barrier curvature
        wts = 1.0 / (s**2 * u**3) + barrier / (u - 4.0) ** 2
        hess = (V * wts[:, None]).T @ V / n
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # near-boundary curvature blowups are expected
            step = -solve_normal_equations(hess, grad)
        scale = 1.0
        for _ in range(60):
            cand = alpha + scale * step
            u_c = V @ cand
            if np.all(u_c > 4.0):
                f_c = objective(u_c)
                if f_c <= f + 1e-12 * (1.0 + abs(f)):
                    break
            scale *= 0.5
        else:
            break
        moved = float(np.max(np.abs(scale * step)))
        alpha, u, f = cand, u_c, f_c
        if moved <= tol:
            break
    if np.min(u) <= 4.0 + 1e-9:
        raise WopInfeasibleError(
            f"fit collapsed onto the feasibility boundary (min alpha'v = {np.min(u):.10f})"
        )
    return FittedPropensity(
        alpha=alpha, spec=spec, fitted=wop_probabilities(u), link="wop"
    )


@dataclass(frozen=True)
class EquivalenceReport:
    """Both sides of the d = k identity and their difference."""

    tau_semipar: float
    tau_dr: float
    difference: float
    alpha: np.ndarray
    min_linear_predictor: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "tau_semipar": self.tau_semipar,
            "tau_dr": self.tau_dr,
            "difference": self.difference,
            "min_linear_predictor": self.min_linear_predictor,
            "feasible": self.feasible,
        }


def verify_d_equals_k_equivalence(
    ds: Dataset,
    v_spec: BasisSpec,
    prop_spec: Optional[BasisSpec] = None,
    alpha: Optional[np.ndarray] = None,
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> EquivalenceReport:
    """Check the d = k identity under the reciprocal-overlap propensity model.

    With V = Vdag and 1/{pi(1-pi)} = alpha'V, multiplying the first estimating
    equation by alpha' shows P_n(beta'V) equals the augmented imputation
    estimator built from m_t(x) = t beta'V + theta'Vdag with raw (unnormalized)
    inverse-probability augmentation terms; the report returns both sides.
    ``alpha`` may be supplied directly (any feasible value works; the identity
    is algebraic), otherwise the dedicated barrier ML solver is used.
    """
    V = design_matrix(ds, v_spec)
    if alpha is not None:
        alpha = np.asarray(alpha, dtype=float)
        u = V @ alpha
        if np.any(u <= 4.0):
            return EquivalenceReport(
                tau_semipar=float("nan"), tau_dr=float("nan"), difference=float("nan"),
                alpha=alpha, min_linear_predictor=float(np.min(u)), feasible=False,
            )
        prop = FittedPropensity(alpha=alpha, spec=v_spec, fitted=wop_probabilities(u), link="wop")
    else:
        try:
            prop = fit_wop_propensity(ds, prop_spec if prop_spec is not None else v_spec)
        except WopInfeasibleError:
            return EquivalenceReport(
                tau_semipar=float("nan"), tau_dr=float("nan"), difference=float("nan"),
                alpha=np.full(v_spec.dimension, np.nan),
                min_linear_predictor=float("nan"), feasible=False,
            )
        u = V @ prop.alpha

    fit = fit_semipar(ds, v_spec, v_spec, propensity=prop, cfg=cfg)
    pi = prop.fitted
    m1 = V @ fit.beta + V @ fit.theta
    m0 = V @ fit.theta
    t = ds.t.astype(float)
    tau_dr = float(
        np.mean(m1) + np.mean(t / pi * (ds.y - m1))
        - np.mean(m0) - np.mean((1.0 - t) / (1.0 - pi) * (ds.y - m0))
    )
    tau_sp = float(np.mean(V @ fit.beta))
    return EquivalenceReport(
        tau_semipar=tau_sp, tau_dr=tau_dr, difference=tau_sp - tau_dr,
        alpha=prop.alpha, min_linear_predictor=float(np.min(u)), feasible=True,
    )
