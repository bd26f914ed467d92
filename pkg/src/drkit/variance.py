"""Plug-in asymptotic variance estimators.

Three layers: the double-robust difference variance (noise variance times the
mean reciprocal overlap weight, plus the variance of the effect function for
the population contrast); the stacked M-estimation sandwich for the
semiparametric fit, with its three per-unit influence functions; and the
homoscedastic closed forms of the limiting variances, evaluated against an
empirical reference sample standing in for the law of X.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .core import BasisSpec, Dataset, FittedPropensity, design_matrix, evaluate_basis
from .glm import solve_normal_equations
from .semipar import SemiparFit

_BLOCK_ZERO_TOL = 1e-8


def _pi_values(pi: Union[FittedPropensity, np.ndarray]) -> np.ndarray:
    return pi.fitted if isinstance(pi, FittedPropensity) else np.asarray(pi, dtype=float)


def var_bdr(
    ds: Dataset,
    gamma_hat_values: np.ndarray,
    pi_hat: Union[FittedPropensity, np.ndarray],
    sigma2_hat: float,
) -> tuple[float, float]:
    """Estimate-scale variances of the double-robust difference estimator.

    Returns ``(var for tau_pop, var for tau_con)``.  The conditional-contrast
    variance is ``sigma2 * P_n{1/omega_op}``; the population contrast adds the
    sample variance of the fitted effect function.  Both are divided by n.
    """
    pi = _pi_values(pi_hat)
    w_inv = 1.0 / (pi * (1.0 - pi))
    gamma = np.asarray(gamma_hat_values, dtype=float)
    a_con = sigma2_hat * float(np.mean(w_inv))
    a_pop = a_con + float(np.var(gamma))
    n = ds.n
    return a_pop / n, a_con / n


@dataclass(frozen=True)
class SandwichPieces:
    """Estimated blocks of the stacked-equation Jacobian and the influences.

    ``a, b, c, d, e, k`` are the sample analogs of the block constants (the
    empirical Jacobian of the stacked equations at the fit); ``minv`` is the
    inverse of the assembled block matrix, via the partitioned formula when
    the off-diagnostic blocks b and e vanish and dense inversion otherwise.
    ``psi`` drives beta; ``phi`` and ``varphi`` drive the overlap-weighted and
    unweighted means of beta'V.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    k: np.ndarray
    m: np.ndarray
    minv: np.ndarray
    used_partitioned_inverse: bool
    psi: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    Psi: np.ndarray
    Lambda_w: float
    Lambda: float
    omega: np.ndarray
    Omega: float

    def beta_standard_errors(self, n: int) -> np.ndarray:
        return np.sqrt(np.diag(self.Psi) / n)

    def influence_means(self) -> np.ndarray:
        """Mean of each influence column; near zero when the equations are solved."""
        return np.concatenate(
            [self.psi.mean(axis=0), [self.phi.mean()], [self.varphi.mean()]]
        )


def partitioned_inverse(a, b, c, d, e, k) -> np.ndarray:
    """Block inverse of [[a, b, e], [c, d, 0], [0, 0, k]] (partitioned formula)."""
    a_inv = np.linalg.inv(a)
    abc = np.linalg.inv(a - b @ np.linalg.inv(d) @ c)
    dcb = np.linalg.inv(d - c @ a_inv @ b)
    k_inv = np.linalg.inv(k)
    d_inv = np.linalg.inv(d)
    top = np.hstack([abc, -a_inv @ b @ dcb, -abc @ e @ k_inv])
    mid = np.hstack([-d_inv @ c @ abc, dcb, d_inv @ c @ abc @ e @ k_inv])
    bot = np.hstack([np.zeros((k.shape[0], a.shape[1] + d.shape[1])), k_inv])
    return np.vstack([top, mid, bot])


def _score_pieces(fit: SemiparFit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-unit score columns and the (k-block, e-gradient) ingredients for S3."""
    ds = fit.ds
    prop = fit.propensity
    q = design_matrix(ds, prop.spec)
    pi = prop.fitted
    if prop.link == "logit":
        if prop.ext_design is not None:
            q = np.column_stack([q, prop.ext_design])
        dlogit = q  # d logit pi / d alpha for the logistic link
        dpi = q * (pi * (1.0 - pi))[:, None]
    elif prop.link == "wop":
        u = q @ prop.alpha if prop.ext_design is None else None
        if u is None:
            raise ValueError("extended designs are not supported for the wop link")
        s = np.sqrt(np.maximum(1.0 - 4.0 / u, 1e-12))
        dlogit = q / (s * u)[:, None]
        dpi = q / (s * u**2)[:, None]
    else:
        raise ValueError(f"unsupported propensity link {prop.link!r}")
    s3 = dlogit * (ds.t - pi)[:, None]
    return s3, dlogit, dpi


def sandwich(ds: Dataset, fit: SemiparFit) -> SandwichPieces:
    """Stacked M-estimation sandwich at a semiparametric fit.

    Blocks are the empirical Jacobian of the stacked estimating equations
    (unbiased for the population constants since E(T|X) is the propensity);
    the three influence functions and their sample variances provide Wald
    inference for beta, the overlap-weighted mean of beta'V, and the plain
    mean of beta'V.
    """
    if fit.ds is not ds and fit.ds.n != ds.n:
        raise ValueError("fit was produced from a different dataset")
    V, Vdag = fit.V, fit.Vdag
    n, d = V.shape
    k_dim = Vdag.shape[1]
    t = ds.t.astype(float)
    pi = fit.propensity.fitted
    resid_t = t - pi
    r = fit.ee_residual()

    s1 = V * (r * resid_t)[:, None]
    s2 = Vdag * r[:, None]
    s3, dlogit, dpi = _score_pieces(fit)

    a = -(V * (t * (1.0 - pi))[:, None]).T @ V / n
    b = -(V * resid_t[:, None]).T @ Vdag / n
    c = -(Vdag * t[:, None]).T @ V / n
    dd = -(Vdag.T @ Vdag) / n
    e = -(V * r[:, None]).T @ dpi / n
    kk = -(dlogit * (pi * (1.0 - pi))[:, None]).T @ dlogit / n

    s_prop = s3.shape[1]
    m = np.zeros((d + k_dim + s_prop, d + k_dim + s_prop))
    m[:d, :d] = a
    m[:d, d : d + k_dim] = b
    m[:d, d + k_dim :] = e
    m[d : d + k_dim, :d] = c
    m[d : d + k_dim, d : d + k_dim] = dd
    m[d + k_dim :, d + k_dim :] = kk

    use_part = (
        float(np.max(np.abs(b))) <= _BLOCK_ZERO_TOL
        and float(np.max(np.abs(e))) <= _BLOCK_ZERO_TOL
    )
    minv = partitioned_inverse(a, b, c, dd, e, kk) if use_part else np.linalg.inv(m)

    scores = np.hstack([s1, s2, s3])
    psi = scores @ minv[:d, :].T

    omega = pi * (1.0 - pi)
    Omega = 1.0 / float(np.mean(omega))
    gamma_vals = V @ fit.beta
    ew_v = Omega * (omega[:, None] * V).mean(axis=0)
    ew_gv = Omega * float(np.mean(omega * gamma_vals))
    phi = psi @ ew_v + Omega * omega * (gamma_vals - ew_gv)
    varphi = psi @ V.mean(axis=0) + (gamma_vals - float(np.mean(gamma_vals)))

    psi_c = psi - psi.mean(axis=0)
    Psi = psi_c.T @ psi_c / n
    return SandwichPieces(
        a=a, b=b, c=c, d=dd, e=e, k=kk, m=m, minv=minv,
        used_partitioned_inverse=use_part,
        psi=psi, phi=phi, varphi=varphi, Psi=Psi,
        Lambda_w=float(np.var(phi)), Lambda=float(np.var(varphi)),
        omega=omega, Omega=Omega,
    )


def weighted_mean_influence(
    fit: SemiparFit, pieces: SandwichPieces, w: np.ndarray
) -> np.ndarray:
    """Plug-in influence of ``P_n{w V}' beta / P_n{w}`` for a nonnegative weight."""
    w = np.asarray(w, dtype=float)
    inv_mean = 1.0 / float(np.mean(w))
    gamma_vals = fit.V @ fit.beta
    ew_v = inv_mean * (w[:, None] * fit.V).mean(axis=0)
    ew_gv = inv_mean * float(np.mean(w * gamma_vals))
    return pieces.psi @ ew_v + inv_mean * w * (gamma_vals - ew_gv)


@dataclass(frozen=True)
class Theorem1Report:
    """Homoscedastic closed-form variances on a reference sample.

    ``Lambda_w_*``/``Lambda_*`` are the three additive pieces for the
    overlap-weighted and plain means of beta'V; the ``*_simplified`` fields
    are the specialization valid when the effect model is exactly linear in V
    (third pieces vanish).  ``Gamma_beta_c`` is the conditional piece of the
    beta variance, computed as the difference Gamma_beta - Gamma_con.
    """

    Sigma: np.ndarray
    Omega: float
    b_values: np.ndarray
    beta_dagger: np.ndarray
    Psi: np.ndarray
    Gamma_beta: np.ndarray
    Gamma_con: np.ndarray
    Gamma_beta_c: np.ndarray
    Gamma_beta_c_direct: np.ndarray
    Lambda_w_1: float
    Lambda_w_2: float
    Lambda_w_3: float
    Lambda_w: float
    Lambda_1: float
    Lambda_2: float
    Lambda_3: float
    Lambda: float
    Lambda_w_simplified: float
    Lambda_simplified: float
    var_bdr_pop: float
    var_bdr_con: float
    efficiency_gap: float


def _as_values(f, x_ref: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.asarray(f(x_ref), dtype=float).reshape(-1)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(x_ref.shape[0], float(arr))
    return arr.reshape(-1)


def theorem1_closed_forms(
    x_ref: np.ndarray,
    pi: Union[Callable[[np.ndarray], np.ndarray], np.ndarray],
    gamma: Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float],
    sigma2: float,
    v_spec: BasisSpec,
) -> Theorem1Report:
    """Evaluate the homoscedastic limiting-variance formulas.

    All population expectations are replaced by means over ``x_ref`` (a large
    sample standing in for the law of X); weighted projections on the span of
    V use weighted least squares under the same empirical measure.  ``pi`` and
    ``gamma`` are the true propensity and effect functions (callables on the
    reference rows, or precomputed vectors).
    """
    x_ref = np.asarray(x_ref, dtype=float)
    V = evaluate_basis(v_spec, x_ref)
    p = _as_values(pi, x_ref)
    g = _as_values(gamma, x_ref)
    omega = p * (1.0 - p)
    w_inv = 1.0 / omega
    mean_omega = float(np.mean(omega))
    Omega = 1.0 / mean_omega
    b_vals = 1.0 - 3.0 * p + 3.0 * p**2

    def wproj_coef(target):
        A = (V * omega[:, None]).T @ V / len(p)
        rhs = V.T @ (omega * target) / len(p)
        return solve_normal_equations(A, rhs)

    def e_w(vals):
        return float(np.mean(omega * vals)) / mean_omega

    Sigma = np.linalg.inv((V * omega[:, None]).T @ V / len(p) / mean_omega)
    beta_dagger = wproj_coef(g)
    fit_g = V @ beta_dagger
    perp_g = g - fit_g  # projection of gamma off the span of V, omega inner product
    p_fit = V @ wproj_coef(w_inv)  # projection of 1/omega onto the span of V

    Gamma_beta = (V * (omega * (sigma2 + perp_g**2 * b_vals))[:, None]).T @ V / len(p) / mean_omega
    Gamma_con = (
        (V * (omega * (sigma2 + perp_g**2 * (1.0 - 2.0 * p) ** 2))[:, None]).T @ V
        / len(p)
        / mean_omega
    )
    Gamma_beta_c = Gamma_beta - Gamma_con
    Gamma_beta_c_direct = (
        (V * (omega * omega * perp_g**2)[:, None]).T @ V / len(p) / mean_omega
    )
    Psi = Omega * Sigma @ Gamma_beta @ Sigma

    vb = fit_g  # V' beta_dagger at the reference points
    vb_centered_w = vb - e_w(vb)
    Lambda_w_1 = Omega * (sigma2 + e_w(perp_g**2 * b_vals))
    Lambda_w_2 = Omega * e_w(omega * vb_centered_w**2)
    Lambda_w_3 = 2.0 * Omega * e_w(omega * perp_g * vb_centered_w)
    Lambda_w = Lambda_w_1 + Lambda_w_2 + Lambda_w_3

    Lambda_1 = (1.0 / Omega) * e_w(p_fit**2 * (sigma2 + perp_g**2 * b_vals))
    Lambda_2 = float(np.var(vb))
    Lambda_3 = 2.0 / Omega * e_w(p_fit * perp_g * vb_centered_w)
    Lambda = Lambda_1 + Lambda_2 + Lambda_3

    Lambda_w_simplified = Omega * (sigma2 + e_w(omega * vb_centered_w**2))
    Lambda_simplified = (1.0 / Omega) * sigma2 * e_w(p_fit**2) + float(np.var(g))

    var_con = sigma2 * float(np.mean(w_inv))
    var_pop = var_con + float(np.var(g))
    gap = (1.0 / Omega) * sigma2 * e_w((w_inv - p_fit) ** 2)

    return Theorem1Report(
        Sigma=Sigma, Omega=Omega, b_values=b_vals, beta_dagger=beta_dagger, Psi=Psi,
        Gamma_beta=Gamma_beta, Gamma_con=Gamma_con, Gamma_beta_c=Gamma_beta_c,
        Gamma_beta_c_direct=Gamma_beta_c_direct,
        Lambda_w_1=Lambda_w_1, Lambda_w_2=Lambda_w_2, Lambda_w_3=Lambda_w_3,
        Lambda_w=Lambda_w, Lambda_1=Lambda_1, Lambda_2=Lambda_2, Lambda_3=Lambda_3,
        Lambda=Lambda, Lambda_w_simplified=Lambda_w_simplified,
        Lambda_simplified=Lambda_simplified,
        var_bdr_pop=var_pop, var_bdr_con=var_con, efficiency_gap=gap,
    )
