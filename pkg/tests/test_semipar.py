import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drkit.core import BasisSpec, Dataset, design_matrix
from drkit.semipar import (
    WopInfeasibleError,
    fit_semipar,
    fit_wop_propensity,
    gamma_hat,
    residual_projection,
    tau_from_semipar,
    verify_d_equals_k_equivalence,
    wop_probabilities,
)


def imbalanced_dataset(seed=11, n=150, p=2):
    """Bounded covariates and strongly treated-leaning propensities (the
    reciprocal-overlap model constrains pi >= 1/2, so its ML fit is only
    interior on data like this)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, p))
    pi = 1.0 / (1.0 + np.exp(-(1.2 + 0.4 * x[:, 0] + 0.3 * x[:, 1])))
    t = (rng.random(n) < pi).astype(int)
    y = 2.0 + x @ np.arange(1, p + 1, dtype=float) + 1.5 * t + rng.normal(size=n)
    return Dataset(y=y, t=t, x=x)


def generic_dataset(seed=3, n=120, p=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    pi = 1.0 / (1.0 + np.exp(-(0.3 * x[:, 0] - 0.5 * x[:, 1])))
    t = (rng.random(n) < pi).astype(int)
    y = 1.0 + x @ np.array([1.0, -2.0, 0.5]) + 2.0 * t + rng.normal(size=n)
    return Dataset(y=y, t=t, x=x)


class TestResidualProjection:
    def test_annihilates_own_columns(self):
        rng = np.random.default_rng(1)
        vdag = np.column_stack([np.ones(30), rng.normal(size=(30, 2))])
        for j in range(3):
            r = residual_projection(vdag[:, j], vdag)
            assert np.max(np.abs(r)) <= 1e-10

    def test_orthogonal_vector_unchanged(self):
        # w orthogonal in sample to all columns of vdag
        vdag = np.column_stack([np.ones(4), np.array([1.0, -1.0, 1.0, -1.0])])
        w = np.array([1.0, 1.0, -1.0, -1.0])
        assert vdag.T @ w == pytest.approx(np.zeros(2))
        assert residual_projection(w, vdag) == pytest.approx(w, abs=1e-12)

    def test_matches_hand_formula(self):
        rng = np.random.default_rng(2)
        vdag = rng.normal(size=(5, 2))
        w = rng.normal(size=5)
        gram_inv = np.linalg.inv(vdag.T @ vdag / 5)
        expected = w - vdag @ gram_inv @ (vdag.T @ w / 5)
        assert residual_projection(w, vdag) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(5, 40), st.integers(1, 3))
    @settings(max_examples=25, deadline=None)
    def test_idempotent(self, seed, n, k):
        rng = np.random.default_rng(seed)
        vdag = np.column_stack([np.ones(n), rng.normal(size=(n, k))])
        w = rng.normal(size=n)
        r1 = residual_projection(w, vdag)
        r2 = residual_projection(r1, vdag)
        assert np.max(np.abs(r1 - r2)) <= 1e-9 * max(1.0, np.max(np.abs(w)))


class TestFitSemipar:
    def test_intercept_only_propensity_matches_ols(self):
        ds = generic_dataset()
        v_spec = BasisSpec.linear(2)
        vdag_spec = BasisSpec.linear(3)
        fit = fit_semipar(ds, v_spec, vdag_spec, BasisSpec(terms=(("const",),)))
        TV = ds.t[:, None] * design_matrix(ds, v_spec)
        X = np.column_stack([TV, design_matrix(ds, vdag_spec)])
        ols, *_ = np.linalg.lstsq(X, ds.y, rcond=None)
        assert np.max(np.abs(fit.beta - ols[: v_spec.dimension])) <= 1e-8

    def test_exact_linear_recovery_without_noise(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(60, 2))
        t = np.tile([0, 1], 30)
        beta = np.array([1.0, 0.5, -0.5])
        theta = np.array([2.0, -1.0, 0.25])
        V = np.column_stack([np.ones(60), x])
        y = t * (V @ beta) + V @ theta
        ds = Dataset(y=y, t=t, x=x)
        fit = fit_semipar(ds, BasisSpec.linear(2), BasisSpec.linear(2), BasisSpec.linear(2))
        assert fit.beta == pytest.approx(beta, abs=1e-8)
        assert fit.theta == pytest.approx(theta, abs=1e-8)

    def test_estimating_equations_satisfied(self):
        ds = generic_dataset(seed=9)
        fit = fit_semipar(ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(3))
        scale = max(1.0, float(np.max(np.abs(ds.y))))
        assert fit.ee_s1_norm <= 1e-8 * scale
        assert fit.ee_s2_norm <= 1e-8 * scale

    def test_bounded_influence_factor(self):
        ds = generic_dataset(seed=12)
        fit = fit_semipar(ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(3))
        assert np.all(np.abs(ds.t - fit.propensity.fitted) < 1.0)

    def test_inverse_omega_weighting_solves_its_equations(self):
        ds = generic_dataset(seed=4)
        fit = fit_semipar(
            ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(2),
            c_tag="inverse-omega",
        )
        pi = fit.propensity.fitted
        c = 1.0 / (pi * (1.0 - pi))
        resid = fit.ee_residual()
        s1 = (fit.V * (c * (ds.t - pi))[:, None]).T @ resid / ds.n
        s2 = fit.Vdag.T @ resid / ds.n
        assert np.max(np.abs(s1)) <= 1e-8
        assert np.max(np.abs(s2)) <= 1e-8

    def test_custom_c_values_scalar_and_matrix(self):
        ds = generic_dataset(seed=5)
        d = 3
        c_scalar = np.linspace(0.5, 2.0, ds.n)
        fit1 = fit_semipar(
            ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(2),
            c_tag="custom", c_values=c_scalar,
        )
        c_mats = np.einsum("n,ij->nij", c_scalar, np.eye(d))
        fit2 = fit_semipar(
            ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(2),
            c_tag="custom", c_values=c_mats,
        )
        assert fit1.beta == pytest.approx(fit2.beta, abs=1e-10)

    def test_v_must_nest_in_vdag(self):
        ds = generic_dataset()
        with pytest.raises(ValueError):
            fit_semipar(ds, BasisSpec.linear(3), BasisSpec.linear(2), BasisSpec.linear(2))


class TestGammaAndTau:
    def test_gamma_hat_trivials(self):
        ds = generic_dataset()
        fit = fit_semipar(ds, BasisSpec.linear(1), BasisSpec.linear(2), BasisSpec.linear(2))
        zero = fit.__class__(**{**fit.__dict__, "beta": np.zeros_like(fit.beta)})
        assert gamma_hat(zero, ds.x[0]) == 0.0
        row = np.array([2.0, 0.0, 0.0])
        spec_fit = fit_semipar(
            ds, BasisSpec(terms=(("const",), ("raw", 0))), BasisSpec.linear(2), BasisSpec.linear(2)
        )
        manual = spec_fit.beta[0] + 2.0 * spec_fit.beta[1]
        assert gamma_hat(spec_fit, row) == pytest.approx(manual)

    def test_intercept_only_gamma_model_tau_is_beta1(self):
        ds = generic_dataset()
        fit = fit_semipar(
            ds, BasisSpec(terms=(("const",),)), BasisSpec.linear(3), BasisSpec.linear(3)
        )
        rep = tau_from_semipar(fit, weight="unit")
        assert rep.estimate == pytest.approx(float(fit.beta[0]), abs=1e-12)

    def test_zero_beta_gives_zero_for_every_weight(self):
        ds = generic_dataset()
        fit = fit_semipar(ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(3))
        zero = fit.__class__(**{**fit.__dict__, "beta": np.zeros_like(fit.beta)})
        for weight in ("unit", "omega-op-hat"):
            assert tau_from_semipar(zero, weight).estimate == 0.0
        custom = tau_from_semipar(zero, np.linspace(0.1, 1.0, ds.n))
        assert custom.estimate == 0.0

    def test_custom_weight_validation(self):
        ds = generic_dataset()
        fit = fit_semipar(ds, BasisSpec.linear(2), BasisSpec.linear(3), BasisSpec.linear(3))
        with pytest.raises(ValueError):
            tau_from_semipar(fit, -np.ones(ds.n))
        with pytest.raises(ValueError):
            tau_from_semipar(fit, np.zeros(ds.n))


class TestWopEquivalence:
    def test_hand_alpha_eight_rows(self):
        # constructed 8-row example, hand-set alpha (no fit)
        x = np.array([[0.5], [-0.25], [0.75], [0.1], [-0.6], [0.3], [-0.1], [0.8]])
        y = np.array([3.0, 1.0, 4.0, 2.0, 0.5, 3.5, 1.5, 5.0])
        t = np.array([1, 0, 1, 1, 0, 1, 0, 1])
        ds = Dataset(y=y, t=t, x=x)
        alpha = np.array([6.0, 1.0])  # alpha'v in [5.4, 6.8]: feasible
        rep = verify_d_equals_k_equivalence(ds, BasisSpec.linear(1), alpha=alpha)
        assert rep.feasible
        assert abs(rep.difference) <= 1e-8

    def test_fitted_path_identity(self):
        rep = verify_d_equals_k_equivalence(imbalanced_dataset(), BasisSpec.linear(2))
        assert rep.feasible
        assert abs(rep.difference) <= 1e-8

    def test_zero_beta_theta_exact_case(self):
        # Y identically 0: beta = theta = 0 and both sides vanish
        ds0 = imbalanced_dataset(seed=21)
        ds = Dataset(y=np.zeros(ds0.n), t=ds0.t, x=ds0.x)
        rep = verify_d_equals_k_equivalence(ds, BasisSpec.linear(2), alpha=np.array([8.0, 0.5, -0.5]))
        assert rep.tau_semipar == pytest.approx(0.0, abs=1e-12)
        assert rep.tau_dr == pytest.approx(0.0, abs=1e-12)

    def test_infeasible_alpha_reported(self):
        ds = imbalanced_dataset(seed=31)
        rep = verify_d_equals_k_equivalence(
            ds, BasisSpec.linear(2), alpha=np.array([4.0, 0.0, 0.0])
        )
        assert not rep.feasible
        assert np.isnan(rep.difference)

    def test_barrier_fit_stays_feasible_even_for_balanced_data(self):
        # balanced treatment wants pi ~ 1/2 (the boundary); the barrier keeps
        # the fit interior and the identity is unaffected
        rng = np.random.default_rng(40)
        x = rng.normal(size=(200, 2))
        t = (rng.random(200) < 0.5).astype(int)
        ds = Dataset(y=rng.normal(size=200), t=t, x=x)
        prop = fit_wop_propensity(ds, BasisSpec.linear(2))
        u = np.column_stack([np.ones(200), x]) @ prop.alpha
        assert np.min(u) > 4.0
        rep = verify_d_equals_k_equivalence(ds, BasisSpec.linear(2))
        assert rep.feasible and abs(rep.difference) <= 1e-8

    def test_two_sides_reported(self):
        rep = verify_d_equals_k_equivalence(imbalanced_dataset(seed=52), BasisSpec.linear(2))
        d = rep.to_dict()
        assert d["tau_semipar"] == rep.tau_semipar
        assert d["tau_dr"] == rep.tau_dr
        assert d["feasible"] is True

    def test_wop_probabilities_inverse_relation(self):
        u = np.array([4.5, 6.0, 10.0, 100.0])
        pi = wop_probabilities(u)
        assert pi * (1 - pi) == pytest.approx(1.0 / u, abs=1e-14)
