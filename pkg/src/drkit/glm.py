"""Iteratively reweighted least squares solvers for the working models.

Two fitters: maximum-likelihood logistic regression for propensity scores and
identity/logit outcome regressions with per-unit weights.  Both solve their
estimating equations to tight tolerances so the algebraic identities used by
the double-robust estimators hold numerically, use step-halving whenever the
deviance would increase, and fall back once to a ridge-stabilized solve when
the normal equations are singular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit


class NumericError(RuntimeError):
    """Raised when a solve fails beyond recovery (singular after ridge retry)."""


class ConvergenceWarning(UserWarning):
    """Iteration budget exhausted; the last iterate is returned."""


class SeparationWarning(UserWarning):
    """Perfect or quasi-perfect separation detected; the fit is still returned."""


class RidgeFallbackWarning(UserWarning):
    """Singular normal equations were stabilized with a small ridge."""


@dataclass(frozen=True)
class IwlsConfig:
    """Solver controls: iteration cap, coefficient tolerance, ridge magnitude.

    ``ridge`` is only applied when the normal equations are singular; 0 means
    use the automatic magnitude 1e-8 * trace / ncols.
    """

    max_iter: int = 100
    tol: float = 1e-10
    ridge: float = 0.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


DEFAULT_CONFIG = IwlsConfig()

_SEP_EDGE = 1e-10


def solve_normal_equations(A: np.ndarray, rhs: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve the symmetric system ``A beta = rhs`` with a one-shot ridge fallback.

    ``A`` must be symmetric positive semidefinite (a Gram matrix).  The solve
    is a Cholesky factorization; when that fails (singular or numerically
    indefinite) the diagonal is inflated by ``ridge`` (or 1e-8 * trace / ncols
    if ridge is 0) and the solve is retried once, with a warning.
    """
    A = np.asarray(A, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(A)
        return scipy.linalg.cho_solve(factor, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        pass
    lam = ridge if ridge > 0 else 1e-8 * max(np.trace(A), 1.0) / A.shape[0]
    warnings.warn(
        f"singular normal equations; retrying with ridge {lam:.3e}", RidgeFallbackWarning,
        stacklevel=2,
    )
    A2 = A + lam * np.eye(A.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A2)
        return scipy.linalg.cho_solve(factor, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        raise NumericError("normal equations singular even after ridge stabilization") from exc


def _logistic_deviance(eta: np.ndarray, t: np.ndarray) -> float:
    # -2 loglik; log(expit(eta)) = -log(1+e^-eta) computed stably
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - t * eta))


def fit_logistic_ml(
    design: np.ndarray,
    t: np.ndarray,
    cfg: IwlsConfig = DEFAULT_CONFIG,
    init: np.ndarray | None = None,
) -> np.ndarray:
    """Maximum-likelihood logistic regression of ``t`` on ``design``.

    Newton/IWLS with step-halving on deviance increase.  On return the mean
    score satisfies ``max |P_n{design (t - expit(design a))}| <= 10 * tol``;
    failure to reach that is warned, not fatal.  Perfect separation (a fitted
    probability leaving (1e-10, 1 - 1e-10)) is reported via
    :class:`SeparationWarning` and the fit is still returned.

    Parameters
    ----------
    design : (n, s) matrix, full column rank unless ridge rescue is acceptable.
    t : (n,) 0/1 vector with both classes present.
    init : optional warm-start coefficients.
    """
    X = np.asarray(design, dtype=float)
    t = np.asarray(t, dtype=float).reshape(-1)
    n, s = X.shape
    if t.min() == t.max():
        raise ValueError("both treatment classes must be present for a logistic fit")
    alpha = np.zeros(s) if init is None else np.asarray(init, dtype=float).copy()
    eta = X @ alpha
    dev = _logistic_deviance(eta, t)
    separated = False
    grad_norm = np.inf
    for _ in range(cfg.max_iter):
        p = expit(eta)
        if not separated and (np.any(p <= _SEP_EDGE) or np.any(p >= 1.0 - _SEP_EDGE)):
            separated = True
        grad = X.T @ (t - p) / n
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= cfg.tol:
            break
        w = p * (1.0 - p)
        A = (X * w[:, None]).T @ X / n
        step = solve_normal_equations(A, grad, cfg.ridge)
        # step-halving keeps the deviance non-increasing
        scale = 1.0
        for _ in range(50):
            cand = alpha + scale * step
            eta_c = X @ cand
            dev_c = _logistic_deviance(eta_c, t)
            if dev_c <= dev + 1e-12 * (1.0 + abs(dev)):
                break
            scale *= 0.5
        else:
            cand, eta_c, dev_c = alpha, eta, dev
        moved = float(np.max(np.abs(cand - alpha)))
        alpha, eta, dev = cand, eta_c, dev_c
        if moved <= cfg.tol:
            break
    p = expit(eta)
    grad_norm = float(np.max(np.abs(X.T @ (t - p) / n)))
    if separated:
        warnings.warn(
            "possible perfect separation: fitted probabilities reached the boundary",
            SeparationWarning,
            stacklevel=2,
        )
    if grad_norm > 10.0 * cfg.tol:
        warnings.warn(
            f"logistic ML did not converge in {cfg.max_iter} iterations "
            f"(last mean-score norm {grad_norm:.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return alpha


def fit_outcome(
    design: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    link: str = "identity",
    cfg: IwlsConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Weighted outcome regression solving ``P_n[w (y - Phi^{-1}(b'v)) v] = 0``.

    The identity link is the exact one-step weighted least squares solution;
    the logit link iterates IWLS on the weighted quasi-likelihood (valid for
    responses in [0, 1]).  Rows with zero weight are allowed; the effective
    design must have full column rank (ridge rescue otherwise).
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n = X.shape[0]
    if link == "identity":
        A = (X * w[:, None]).T @ X / n
        rhs = X.T @ (w * y) / n
        return solve_normal_equations(A, rhs, cfg.ridge)
    if link != "logit":
        raise ValueError(f"unsupported link {link!r} (identity and logit only)")

    beta = np.zeros(X.shape[1])
    # start from the weighted mean on the intercept scale when possible
    ybar = float(np.sum(w * y) / np.sum(w)) if np.sum(w) > 0 else 0.5
    ybar = min(max(ybar, 1e-6), 1.0 - 1e-6)
    beta[0] = np.log(ybar / (1.0 - ybar))
    eta = X @ beta

    def qdev(eta_):
        mu_ = expit(eta_)
        mu_ = np.clip(mu_, 1e-12, 1.0 - 1e-12)
        return float(-2.0 * np.sum(w * (y * np.log(mu_) + (1.0 - y) * np.log(1.0 - mu_))))

    dev = qdev(eta)
    for _ in range(cfg.max_iter):
        mu = expit(eta)
        grad = X.T @ (w * (y - mu)) / n
        ww = w * mu * (1.0 - mu)
        A = (X * ww[:, None]).T @ X / n
        step = solve_normal_equations(A, grad, cfg.ridge)
        scale = 1.0
        for _ in range(50):
            cand = beta + scale * step
            eta_c = X @ cand
            dev_c = qdev(eta_c)
            if dev_c <= dev + 1e-12 * (1.0 + abs(dev)):
                break
            scale *= 0.5
        else:
            cand, eta_c, dev_c = beta, eta, dev
        moved = float(np.max(np.abs(cand - beta)))
        beta, eta, dev = cand, eta_c, dev_c
        if moved <= cfg.tol:
            break
    mu = expit(eta)
    resid = float(np.max(np.abs(X.T @ (w * (y - mu)) / n)))
    if resid > 10.0 * max(cfg.tol, 1e-12) * max(1.0, float(np.max(np.abs(y)))):
        warnings.warn(
            f"logit outcome fit did not converge (estimating-equation norm {resid:.3e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return beta


def predict_link(design: np.ndarray, coef: np.ndarray, link: str) -> np.ndarray:
    """Mean response Phi^{-1}(design @ coef) for the supported links."""
    eta = np.asarray(design, dtype=float) @ np.asarray(coef, dtype=float)
    if link == "identity":
        return eta
    if link == "logit":
        return expit(eta)
    raise ValueError(f"unsupported link {link!r}")
