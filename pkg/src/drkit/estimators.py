"""Treatment-specific means and ATE estimators.

Implements the inverse-probability-weighted arm means (self-normalized ``ipw``
and unnormalized Horvitz-Thompson ``ht``), the bounded double-robust arm mean
``mu_bdr`` combining an outcome fit with a propensity fit, the three outcome
fitting strategies (plain per-arm IWLS, propensity-weighted least squares, and
the extended ``NR`` fit with the arm propensity as an extra regressor), and
the single-iteration extended-propensity variants that are never less
efficient than IPW/HT when the propensity model is right.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    BasisSpec,
    Dataset,
    DataError,
    EstimateReport,
    FittedOutcome,
    FittedPropensity,
    design_matrix,
    overlap_summary,
)
from .glm import DEFAULT_CONFIG, IwlsConfig, fit_logistic_ml, fit_outcome, predict_link

METHODS = ("REG", "WLS", "NR", "ITER-WLS", "ITER-REG")


def fit_propensity(
    ds: Dataset, spec: BasisSpec, cfg: IwlsConfig = DEFAULT_CONFIG
) -> FittedPropensity:
    """Maximum-likelihood logistic propensity fit on the spec's design."""
    design = design_matrix(ds, spec)
    alpha = fit_logistic_ml(design, ds.t, cfg)
    fitted = predict_link(design, alpha, "logit")
    return FittedPropensity(alpha=alpha, spec=spec, fitted=_open_unit(fitted))


def _open_unit(p: np.ndarray) -> np.ndarray:
    # keep probabilities strictly inside (0,1); expit can round to 0/1
    tiny = np.finfo(float).tiny
    return np.clip(p, tiny, 1.0 - 1e-16)


def _arm_probs(pi: np.ndarray, t: int) -> np.ndarray:
    return pi if t == 1 else 1.0 - pi


def _require_arm(ds: Dataset, t: int) -> np.ndarray:
    ind = ds.t == t
    if not ind.any():
        raise DataError(f"treatment arm {t} is empty")
    return ind.astype(float)


def _mu_ipw(y, t_vec, pi, t) -> float:
    ind = (t_vec == t).astype(float)
    w = ind / _arm_probs(pi, t)
    denom = w.mean()
    if denom == 0.0:
        raise DataError("zero inverse-probability denominator")
    return float((w * y).mean() / denom)


def _mu_ht(y, t_vec, pi, t) -> float:
    ind = (t_vec == t).astype(float)
    return float((ind * y / _arm_probs(pi, t)).mean())


def _mu_bdr(y, t_vec, m_t, pi, t) -> float:
    ind = (t_vec == t).astype(float)
    w = ind / _arm_probs(pi, t)
    denom = w.mean()
    if denom == 0.0:
        raise DataError("zero inverse-probability denominator")
    return float(np.mean(m_t) + np.mean(w * (y - m_t)) / denom)


def mu_ipw(ds: Dataset, pi_hat: FittedPropensity, t: int) -> float:
    """Self-normalized inverse-probability-weighted mean of arm ``t``."""
    _require_arm(ds, t)
    return _mu_ipw(ds.y, ds.t, pi_hat.fitted, t)


def mu_ht(ds: Dataset, pi_hat: FittedPropensity, t: int) -> float:
    """Horvitz-Thompson (unnormalized) weighted mean of arm ``t``."""
    _require_arm(ds, t)
    return _mu_ht(ds.y, ds.t, pi_hat.fitted, t)


def mu_bdr(ds: Dataset, m_t: np.ndarray, pi_hat: FittedPropensity, t: int) -> float:
    """Bounded double-robust arm mean.

    ``P_n{m_t} + P_n[(I(T=t)/pi_t)(Y - m_t)] / P_n[I(T=t)/pi_t]`` for the
    supplied fitted regression values ``m_t`` (evaluated at every sample
    point) and fitted propensities.
    """
    _require_arm(ds, t)
    return _mu_bdr(ds.y, ds.t, np.asarray(m_t, dtype=float), pi_hat.fitted, t)


def _fit_both_arms(ds, design, weights_for_arm, link, cfg, extra_col_for_arm=None):
    """Fit each arm's regression; returns coefficient vectors and fitted values."""
    coefs, fitted = [], []
    for t in (0, 1):
        _require_arm(ds, t)
        X = design
        if extra_col_for_arm is not None:
            X = np.column_stack([design, extra_col_for_arm(t)])
        coef = fit_outcome(X, ds.y, weights_for_arm(t), link=link, cfg=cfg)
        coefs.append(coef)
        fitted.append(predict_link(X, coef, link))
    return coefs, fitted


def fit_m_reg(
    ds: Dataset,
    spec: BasisSpec,
    pi_hat: Optional[FittedPropensity] = None,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> FittedOutcome:
    """Plain per-arm IWLS outcome fit (weights are the arm indicators)."""
    design = design_matrix(ds, spec)
    coefs, fitted = _fit_both_arms(
        ds, design, lambda t: (ds.t == t).astype(float), link, cfg
    )
    return FittedOutcome(
        varsigma0=coefs[0], varsigma1=coefs[1], link=link, spec=spec,
        method="REG", m0=fitted[0], m1=fitted[1], pi=pi_hat,
    )


def fit_m_wls(
    ds: Dataset,
    spec: BasisSpec,
    pi_hat: FittedPropensity,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> FittedOutcome:
    """Propensity-weighted outcome fit: weights I(T=t)/pi_t(X)."""
    design = design_matrix(ds, spec)
    pi = pi_hat.fitted

    def w(t):
        return (ds.t == t).astype(float) / _arm_probs(pi, t)

    coefs, fitted = _fit_both_arms(ds, design, w, link, cfg)
    return FittedOutcome(
        varsigma0=coefs[0], varsigma1=coefs[1], link=link, spec=spec,
        method="WLS", m0=fitted[0], m1=fitted[1], pi=pi_hat,
    )


def fit_m_nr(
    ds: Dataset,
    spec: BasisSpec,
    pi_hat: FittedPropensity,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> FittedOutcome:
    """Extended outcome fit with pi_t(x) appended to the design, WLS weights.

    By construction ``P_n[I(T=t)(Y - m_t)] = 0``, so the outcome model is only
    used to impute the unobserved counterfactual of each unit.
    """
    design = design_matrix(ds, spec)
    pi = pi_hat.fitted

    def w(t):
        return (ds.t == t).astype(float) / _arm_probs(pi, t)

    coefs, fitted = _fit_both_arms(
        ds, design, w, link, cfg, extra_col_for_arm=lambda t: _arm_probs(pi, t)
    )
    return FittedOutcome(
        varsigma0=coefs[0][:-1], varsigma1=coefs[1][:-1], link=link, spec=spec,
        method="NR", m0=fitted[0], m1=fitted[1],
        nr_phi=(float(coefs[0][-1]), float(coefs[1][-1])), pi=pi_hat,
    )


@dataclass(frozen=True)
class IterFit:
    """Result of the single-iteration extended-propensity pipeline."""

    variant: str
    base: FittedPropensity
    pi_arm0: FittedPropensity
    pi_arm1: FittedPropensity
    outcome: FittedOutcome

    def pi_for_arm(self, t: int) -> FittedPropensity:
        return self.pi_arm1 if t == 1 else self.pi_arm0


def fit_pi_iter(
    ds: Dataset,
    variant: str,
    q_spec: BasisSpec,
    outcome_spec: BasisSpec,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> IterFit:
    """Single-iteration improved estimator pipeline.

    Steps: (1) ML propensity fit on q(x); (2) outcome fit (WLS weights for
    ITER-WLS, plain for ITER-REG); (3) build the data-dependent regressors
    g_{t,1} = m_t / pi_t and g_{t,2} = 1 / pi_t; (4) per arm, refit the
    propensity under the extended logistic model including (g_{t,1}, g_{t,2});
    (5) for ITER-WLS, refit the outcome with weights I(T=t)/pi^{(t)}_t.
    """
    if variant not in ("ITER-WLS", "ITER-REG"):
        raise ValueError("variant must be 'ITER-WLS' or 'ITER-REG'")
    base = fit_propensity(ds, q_spec, cfg)
    pi = base.fitted
    if variant == "ITER-WLS":
        outcome = fit_m_wls(ds, outcome_spec, base, link, cfg)
    else:
        outcome = fit_m_reg(ds, outcome_spec, base, link, cfg)

    q_design = design_matrix(ds, q_spec)
    s = q_design.shape[1]
    ext_fits = []
    for t in (0, 1):
        pt = _arm_probs(pi, t)
        g1 = outcome.arm_values(t) / pt
        g2 = 1.0 / pt
        ext = np.column_stack([q_design, g1, g2])
        coef = fit_logistic_ml(ext, ds.t, cfg, init=np.concatenate([base.alpha, [0.0, 0.0]]))
        fitted = _open_unit(predict_link(ext, coef, "logit"))
        ext_fits.append(
            FittedPropensity(
                alpha=coef[:s], spec=q_spec, fitted=fitted,
                extension=(float(coef[s]), float(coef[s + 1])),
                ext_design=np.column_stack([g1, g2]), arm=t,
            )
        )

    if variant == "ITER-WLS":
        design = design_matrix(ds, outcome_spec)
        coefs, fitted = [], []
        for t in (0, 1):
            w = (ds.t == t).astype(float) / _arm_probs(ext_fits[t].fitted, t)
            coef = fit_outcome(design, ds.y, w, link=link, cfg=cfg)
            coefs.append(coef)
            fitted.append(predict_link(design, coef, link))
        outcome = FittedOutcome(
            varsigma0=coefs[0], varsigma1=coefs[1], link=link, spec=outcome_spec,
            method="ITER-WLS", m0=fitted[0], m1=fitted[1],
        )
    return IterFit(
        variant=variant, base=base, pi_arm0=ext_fits[0], pi_arm1=ext_fits[1], outcome=outcome
    )


def _pooled_sigma2(ds: Dataset, outcome: FittedOutcome) -> float:
    resid = ds.y - np.where(ds.t == 1, outcome.m1, outcome.m0)
    return float(np.mean(resid**2))


def tau_bdr(
    ds: Dataset,
    method: str,
    prop_spec: BasisSpec,
    outcome_spec: BasisSpec,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
    eps: float = 0.01,
    truncate: Optional[float] = None,
) -> EstimateReport:
    """ATE estimate ``mu_1,B-DR - mu_0,B-DR`` for the chosen outcome method.

    ``method`` is one of REG / WLS / NR / ITER-WLS / ITER-REG.  The variance
    is the plug-in asymptotic variance for tau_pop (noise variance times the
    mean reciprocal overlap weight plus the sample variance of the fitted
    effect function), divided by n.  ``truncate`` optionally clips fitted
    propensities to [truncate, 1 - truncate] inside the weights only;
    diagnostics always describe the raw fit.
    """
    from .variance import var_bdr  # local import: variance sits above estimators

    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    for t in (0, 1):
        _require_arm(ds, t)

    base = fit_propensity(ds, prop_spec, cfg)
    if method in ("ITER-WLS", "ITER-REG"):
        it = fit_pi_iter(ds, method, prop_spec, outcome_spec, link, cfg)
        outcome = it.outcome
        mus = []
        for t in (0, 1):
            pi_t = it.pi_for_arm(t).fitted
            pi_t = np.clip(pi_t, truncate, 1.0 - truncate) if truncate else pi_t
            mus.append(_mu_bdr(ds.y, ds.t, outcome.arm_values(t), pi_t, t))
    else:
        if method == "REG":
            outcome = fit_m_reg(ds, outcome_spec, base, link, cfg)
        elif method == "WLS":
            outcome = fit_m_wls(ds, outcome_spec, base, link, cfg)
        else:
            outcome = fit_m_nr(ds, outcome_spec, base, link, cfg)
        pi = np.clip(base.fitted, truncate, 1.0 - truncate) if truncate else base.fitted
        mus = [_mu_bdr(ds.y, ds.t, outcome.arm_values(t), pi, t) for t in (0, 1)]

    tau = mus[1] - mus[0]
    var_pop, _ = var_bdr(
        ds, outcome.gamma_values(), base, sigma2_hat=_pooled_sigma2(ds, outcome)
    )
    notes = (f"truncated at {truncate}",) if truncate else ()
    return EstimateReport.from_variance(
        tag=f"bdr-{method.lower()}",
        estimate=tau,
        variance=var_pop,
        diagnostics=overlap_summary(base.fitted, ds.t, eps),
        notes=notes,
    )


def _score_projected_variance(u: np.ndarray, scores: np.ndarray) -> float:
    """Variance of the residual of u from least squares on the score columns."""
    coef, *_ = np.linalg.lstsq(scores, u, rcond=None)
    resid = u - scores @ coef
    return float(np.mean(resid**2))


def _tau_weighted(
    ds: Dataset,
    prop_spec: BasisSpec,
    kind: str,
    cfg: IwlsConfig,
    eps: float,
) -> EstimateReport:
    base = fit_propensity(ds, prop_spec, cfg)
    pi = base.fitted
    y, tv = ds.y, ds.t
    if kind == "ipw":
        mus, infl = [], []
        for t in (0, 1):
            _require_arm(ds, t)
            mu = _mu_ipw(y, tv, pi, t)
            ind = (tv == t).astype(float)
            w = ind / _arm_probs(pi, t)
            infl.append(w * (y - mu) / w.mean())
            mus.append(mu)
        u = infl[1] - infl[0]
        tau = mus[1] - mus[0]
    else:
        mus, infl = [], []
        for t in (0, 1):
            _require_arm(ds, t)
            mu = _mu_ht(y, tv, pi, t)
            ind = (tv == t).astype(float)
            infl.append(ind * y / _arm_probs(pi, t) - mu)
            mus.append(mu)
        u = infl[1] - infl[0]
        tau = mus[1] - mus[0]
    # residual from projection on the propensity score components (the ML fit
    # of the propensity is what makes the weighted estimators this precise)
    scores = design_matrix(ds, prop_spec) * (tv - pi)[:, None]
    var = _score_projected_variance(u, scores) / ds.n
    return EstimateReport.from_variance(
        tag=kind, estimate=tau, variance=var,
        diagnostics=overlap_summary(pi, tv, eps),
    )


def tau_ipw(
    ds: Dataset, prop_spec: BasisSpec, cfg: IwlsConfig = DEFAULT_CONFIG, eps: float = 0.01
) -> EstimateReport:
    """ATE from self-normalized IPW arm means, with score-projected variance."""
    return _tau_weighted(ds, prop_spec, "ipw", cfg, eps)


def tau_ht(
    ds: Dataset, prop_spec: BasisSpec, cfg: IwlsConfig = DEFAULT_CONFIG, eps: float = 0.01
) -> EstimateReport:
    """ATE from Horvitz-Thompson arm means, with score-projected variance."""
    return _tau_weighted(ds, prop_spec, "ht", cfg, eps)
