"""Acceptance suite.

One test per criterion, each printing a PASS/FAIL line with the measured
numbers.  Monte Carlo experiments share module-scoped fixtures so the
quadrant runs are executed once.  Criteria 2 and 5 contain sub-checks that
are unattainable on this benchmark (finite-sample bias of the NR estimator;
selection-rule orderings contingent on candidate models not available in the
source text); they are asserted as stated and fail with the full evidence.
"""

import warnings

import numpy as np
import pytest
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from drkit.core import BasisSpec, Dataset, design_matrix
from drkit.estimators import fit_m_nr, fit_m_wls, fit_propensity, mu_bdr, tau_bdr
from drkit.model_select import (
    SelectionGrid,
    attach_bootstrap_covariance,
    build_grid,
    default_out_specs,
    default_prop_specs,
    oracle,
    select_cv,
    select_joint,
    select_range,
    select_sd,
    select_wald,
)
from drkit.semipar import fit_semipar, tau_from_semipar, verify_d_equals_k_equivalence
from drkit.simulate import (
    DgpConfig,
    arm_mean_estimator,
    bdr_estimator,
    gen_dataset,
    inverse_b,
    run_replications,
    semipar_estimator,
    transform_b,
    true_mu,
    true_propensity,
    z_linear_spec,
    x_linear_spec,
)
from drkit.variance import theorem1_closed_forms
from drkit import cli

pytestmark = [pytest.mark.filterwarnings("ignore"), pytest.mark.acceptance]


def _report(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} ({name}): {status}{(' - ' + detail) if detail else ''}")


# --- criterion 1: algebraic identities --------------------------------------

def _random_dataset(rng, n):
    x = rng.uniform(-1.0, 1.0, size=(n, 3))
    a0 = rng.uniform(0.8, 1.6)
    coef = rng.uniform(-0.5, 0.5, size=3)
    pi = expit(a0 + x @ coef)
    t = (rng.random(n) < pi).astype(int)
    tau = rng.uniform(-2.0, 2.0)
    y = 1.0 + x @ rng.uniform(-2.0, 2.0, size=3) + tau * t + rng.normal(size=n)
    ds = Dataset(y=y, t=t, x=x)
    if min(ds.arm_counts()) < 4:
        return None
    return ds


def test_criterion_1_algebraic_identities():
    rng = np.random.default_rng(20250810)
    prop_spec = BasisSpec.linear(2)
    out_spec = BasisSpec.linear(3)
    v_small = BasisSpec.linear(1)
    wop_spec = BasisSpec.linear(2)
    worst = {"wls": 0.0, "nr": 0.0, "ols": 0.0, "wop": 0.0}
    n_datasets = 0
    n_feasible = 0
    while n_datasets < 200:
        n = 50 if n_datasets % 2 == 0 else 500
        ds = _random_dataset(rng, n)
        if ds is None:
            continue
        n_datasets += 1
        # (a) WLS collapse
        pi = fit_propensity(ds, prop_spec)
        wls = fit_m_wls(ds, out_spec, pi)
        lhs = mu_bdr(ds, wls.m1, pi, 1) - mu_bdr(ds, wls.m0, pi, 0)
        worst["wls"] = max(worst["wls"], abs(lhs - float(wls.m1.mean() - wls.m0.mean())))
        # (b) NR imputation identity
        nr = fit_m_nr(ds, out_spec, pi)
        for arm in (0, 1):
            mu = mu_bdr(ds, nr.arm_values(arm), pi, arm)
            imput = float(np.mean(np.where(ds.t == arm, ds.y, nr.arm_values(arm))))
            worst["nr"] = max(worst["nr"], abs(mu - imput))
        # (c) beta = beta_OLS under intercept-only propensity
        fit = fit_semipar(ds, v_small, out_spec, BasisSpec(terms=(("const",),)))
        X = np.column_stack(
            [ds.t[:, None] * design_matrix(ds, v_small), design_matrix(ds, out_spec)]
        )
        ols, *_ = np.linalg.lstsq(X, ds.y, rcond=None)
        worst["ols"] = max(worst["ols"], float(np.max(np.abs(fit.beta - ols[: v_small.dimension]))))
        # (d) d = k reciprocal-overlap equivalence, where the fit is feasible
        rep = verify_d_equals_k_equivalence(ds, wop_spec)
        if rep.feasible:
            n_feasible += 1
            worst["wop"] = max(worst["wop"], abs(rep.difference))
    # (e) joint selection with c = 0 coincides with the SD rule
    joint_ok = True
    for _ in range(200):
        I, J = rng.integers(2, 7), rng.integers(2, 5)
        tau = rng.normal(size=(I, J))
        grid = SelectionGrid(
            prop_specs=tuple(BasisSpec.linear(1) for _ in range(I)),
            out_specs=tuple(BasisSpec.linear(1) for _ in range(J)),
            tau=tau,
            failures=np.zeros((I, J), dtype=bool),
            reasons=tuple(tuple(None for _ in range(J)) for _ in range(I)),
            n=100,
            dr_method="WLS",
            cell_warnings=tuple(tuple(0 for _ in range(J)) for _ in range(I)),
        )
        sd = select_sd(grid)
        joint = select_joint(grid, c=0.0)
        joint_ok = joint_ok and (joint.i, joint.j) == (sd.i, sd.j)

    ok = (
        worst["wls"] <= 1e-8
        and worst["nr"] <= 1e-8
        and worst["ols"] <= 1e-8
        and worst["wop"] <= 1e-8
        and n_feasible >= 100
        and joint_ok
    )
    detail = (
        f"max deviations: WLS collapse {worst['wls']:.2e}, NR imputation {worst['nr']:.2e}, "
        f"OLS equality {worst['ols']:.2e}, d=k equivalence {worst['wop']:.2e} "
        f"({n_feasible}/200 feasible), joint(c=0)==sd {joint_ok}"
    )
    _report(1, "algebraic identities", ok, detail)
    assert ok, detail


# --- criteria 2 and 4: quadrant Monte Carlo ---------------------------------

QUAD_CFG = DgpConfig(n=1000, seed=20250810)
R_QUAD = 500


@pytest.fixture(scope="module")
def quadrants():
    zs, xs = z_linear_spec(), x_linear_spec()
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, (ps, os_) in {
            "CC": (zs, zs),
            "CI": (zs, xs),
            "IC": (xs, zs),
        }.items():
            suite = {
                m.lower(): bdr_estimator(m, ps, os_)
                for m in ("REG", "WLS", "NR", "ITER-WLS", "ITER-REG")
            }
            suite["semipar"] = semipar_estimator(os_, os_, ps)
            truths = {}
            if name == "CI":
                for arm in (0, 1):
                    suite[f"mu{arm}_ipw"] = arm_mean_estimator("ipw", arm, ps)
                    suite[f"mu{arm}_ht"] = arm_mean_estimator("ht", arm, ps)
                    suite[f"mu{arm}_iterwls"] = arm_mean_estimator("iter-wls", arm, ps, os_)
                    for kind in ("ipw", "ht", "iterwls"):
                        truths[f"mu{arm}_{kind}"] = true_mu(QUAD_CFG, arm)
            out[name] = run_replications(QUAD_CFG, R_QUAD, suite, truths=truths)
    return out


TAGS = ("reg", "wls", "nr", "iter-wls", "iter-reg", "semipar")


def test_criterion_2_double_robust_unbiasedness(quadrants):
    violations = []
    lines = []
    for quad in ("CC", "CI", "IC"):
        s = quadrants[quad]
        for tag in TAGS:
            row = s.row(tag)
            bound = 3.0 * s.mc_se(tag)
            ok = abs(row.mc_bias) <= bound
            lines.append(f"{quad}/{tag}: bias {row.mc_bias:+.4f} vs 3*MCSE {bound:.4f}")
            if not ok:
                violations.append(lines[-1])
    ok = not violations
    detail = "; ".join(violations) if violations else f"all {3 * len(TAGS)} cells within 3 MC SE"
    _report(2, "double-robust unbiasedness", ok, detail)
    assert ok, (
        "bias exceeded 3 MC SE in: "
        + "; ".join(violations)
        + " | the NR (and borderline ITER-WLS) finite-sample bias under a correct "
        "propensity and wrong outcome model is a documented property of this "
        "benchmark (see decisions ledger); it vanishes as n grows"
    )


def test_criterion_4_efficiency_orderings(quadrants):
    s = quadrants["CI"]
    problems = []
    # (a) single-iteration extended estimator never beats IPW/HT by less than -5%
    for arm in (0, 1):
        v_iter = s.row(f"mu{arm}_iterwls").mc_variance
        for comp in ("ipw", "ht"):
            v_comp = s.row(f"mu{arm}_{comp}").mc_variance
            if v_iter > 1.05 * v_comp:
                problems.append(f"mu{arm}: iter-wls var {v_iter:.3f} > 1.05 * {comp} var {v_comp:.3f}")
    # (b) the effect-model estimator vs the DR differences
    v_sp = s.row("semipar").mc_variance
    ratios = {}
    for tag in ("reg", "wls", "nr", "iter-wls", "iter-reg"):
        v = s.row(tag).mc_variance
        ratios[tag] = v / v_sp
        if not v_sp < v:
            problems.append(f"semipar var {v_sp:.3f} not < {tag} var {v:.3f}")
    if ratios["wls"] < 2.0:
        problems.append(f"variance ratio bdr-wls/semipar = {ratios['wls']:.2f} < 2")
    ok = not problems
    detail = "ratios vs semipar: " + ", ".join(f"{k}={v:.2f}" for k, v in ratios.items())
    _report(4, "efficiency orderings", ok, detail + ("; " + "; ".join(problems) if problems else ""))
    assert ok, "; ".join(problems)


# --- criterion 3: variance and coverage --------------------------------------

@pytest.fixture(scope="module")
def bigmc():
    zs = z_linear_spec()
    cfg = DgpConfig(n=5000, seed=31415)
    R = 1000
    res = {k: [] for k in ("bdr_est", "bdr_var", "bdr_cov", "sp_est", "sp_var", "sp_cov")}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(R):
            ds = gen_dataset(cfg, rep=rep)
            rb = tau_bdr(ds, "WLS", zs, zs)
            res["bdr_est"].append(rb.estimate)
            res["bdr_var"].append(rb.variance)
            res["bdr_cov"].append(rb.covers(0.0))
            fit = fit_semipar(ds, zs, zs, zs)
            rs = tau_from_semipar(fit)
            res["sp_est"].append(rs.estimate)
            res["sp_var"].append(rs.variance)
            res["sp_cov"].append(rs.covers(0.0))
    return {k: np.asarray(v) for k, v in res.items()}


def test_criterion_3_variance_and_coverage(bigmc):
    problems = []
    mc_var_bdr = float(bigmc["bdr_est"].var())
    mc_var_sp = float(bigmc["sp_est"].var())
    ratio_bdr = float(np.mean(bigmc["bdr_var"])) / mc_var_bdr
    ratio_sp = float(np.mean(bigmc["sp_var"])) / mc_var_sp
    cov_bdr = float(np.mean(bigmc["bdr_cov"]))
    cov_sp = float(np.mean(bigmc["sp_cov"]))
    if not (1.0 - 0.15 <= ratio_bdr <= 1.0 + 0.15):
        problems.append(f"var_bdr plug-in / MC = {ratio_bdr:.3f} outside 15%")
    if not (1.0 - 0.15 <= ratio_sp <= 1.0 + 0.15):
        problems.append(f"Lambda plug-in / MC = {ratio_sp:.3f} outside 15%")
    if not (0.93 <= cov_bdr <= 0.97):
        problems.append(f"bdr coverage {cov_bdr:.3f} outside [0.93, 0.97]")
    if not (0.93 <= cov_sp <= 0.97):
        problems.append(f"semipar coverage {cov_sp:.3f} outside [0.93, 0.97]")
    rng = np.random.default_rng(271828)
    x_ref = rng.standard_normal((200_000, 4))
    t1 = theorem1_closed_forms(
        x_ref, pi=true_propensity(x_ref), gamma=0.0, sigma2=1.0, v_spec=BasisSpec.linear(4)
    )
    ratio_t1 = t1.Lambda / (5000.0 * mc_var_sp)
    if not (0.90 <= ratio_t1 <= 1.10):
        problems.append(f"theorem-1 Lambda / MC = {ratio_t1:.3f} outside 10%")
    ok = not problems
    detail = (
        f"plug-in/MC: bdr {ratio_bdr:.3f}, semipar {ratio_sp:.3f}; coverage: bdr {cov_bdr:.3f}, "
        f"semipar {cov_sp:.3f}; theorem-1/MC {ratio_t1:.3f}"
    )
    _report(3, "variance and coverage", ok, detail + ("; " + "; ".join(problems) if problems else ""))
    assert ok, "; ".join(problems)


# --- criterion 5: model selection --------------------------------------------

@pytest.fixture(scope="module")
def gridmc():
    props, outs = default_prop_specs(), default_out_specs()
    R = 500
    cfg = DgpConfig(n=1000, seed=606)
    taus = {k: [] for k in ("sd", "range", "wald", "joint1", "joint2", "joint3", "joint4", "cv", "oracle")}
    cells = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(R):
            ds = gen_dataset(cfg, rep=rep)
            grid = build_grid(ds, props, outs)
            attach_bootstrap_covariance(ds, grid, B=200, seed=rep)
            taus["sd"].append(select_sd(grid).tau)
            taus["range"].append(select_range(grid).tau)
            taus["wald"].append(select_wald(grid).tau)
            for c in (1, 2, 3, 4):
                taus[f"joint{c}"].append(select_joint(grid, c=float(c)).tau)
            taus["cv"].append(select_cv(ds, props, outs, folds=5, seed=rep, grid=grid).tau)
            taus["oracle"].append(oracle(grid, 0.0).tau)
            cells.append(grid.tau.copy())
    mse = {k: float(np.mean(np.asarray(v) ** 2)) for k, v in taus.items()}
    cell_mse = np.mean(np.asarray(cells) ** 2, axis=0)
    return mse, cell_mse


def test_criterion_5_model_selection(gridmc):
    mse, cell_mse = gridmc
    best_cell = float(cell_mse.min())
    problems = []
    if not (mse["oracle"] < mse["sd"] and mse["oracle"] < mse["range"]):
        problems.append("oracle not better than sd/range")
    if abs(mse["sd"] - mse["range"]) > 0.05 * min(mse["sd"], mse["range"]):
        problems.append(f"sd {mse['sd']:.3f} and range {mse['range']:.3f} differ by more than 5%")
    if not (mse["sd"] < mse["cv"] and mse["range"] < mse["cv"]):
        problems.append(f"sd/range ({mse['sd']:.3f}/{mse['range']:.3f}) not better than cv ({mse['cv']:.3f})")
    adaptive = [mse[k] for k in ("sd", "range", "cv", "joint1", "joint2", "joint3", "joint4")]
    if not all(mse["wald"] > v for v in adaptive):
        problems.append(f"wald ({mse['wald']:.3f}) not worst among adaptive rules")
    if not mse["oracle"] <= 0.85 * best_cell:
        problems.append(f"oracle {mse['oracle']:.3f} not >=15% below best cell {best_cell:.3f}")
    ok = not problems
    table = ", ".join(f"{k}={v:.3f}" for k, v in sorted(mse.items(), key=lambda kv: kv[1]))
    detail = f"MC MSE: {table}; best fixed cell {best_cell:.3f}"
    _report(5, "model selection orderings", ok, detail + ("; " + "; ".join(problems) if problems else ""))
    assert ok, (
        "; ".join(problems)
        + f" | full MSE table: {table}; best fixed cell {best_cell:.3f}"
        + " | the CV/Wald sub-orderings depend on the paper's candidate models "
        "(Table 2), which are not available; see decisions ledger"
    )


# --- criterion 6: simulation fidelity -----------------------------------------

def test_criterion_6_simulation_fidelity():
    ds = gen_dataset(DgpConfig(n=100_000, seed=161803))
    problems = []
    n = ds.n
    se_mean = 1.0 / np.sqrt(n)
    if not np.all(np.abs(ds.z.mean(axis=0)) <= 3 * se_mean):
        problems.append("a Z column mean is off by more than 3 SE")
    se_var = np.sqrt(2.0 / n)
    if not np.all(np.abs(ds.z.var(axis=0) - 1.0) <= 3 * se_var):
        problems.append("a Z column variance is off by more than 3 SE")
    s2 = 1.0 + 0.25 + 0.0625 + 0.01
    nodes, wts = hermgauss(80)
    p_true = float(np.sum(wts / np.sqrt(np.pi) * expit(np.sqrt(2.0 * s2) * nodes)))
    se_p = np.sqrt(p_true * (1.0 - p_true) / n)
    p_hat = float(ds.t.mean())
    if abs(p_hat - p_true) > 3 * se_p:
        problems.append(f"P(T=1) {p_hat:.4f} vs quadrature {p_true:.4f} beyond 3 SE")
    rng = np.random.default_rng(777)
    z = rng.standard_normal((100_000, 4))
    zz, singular = inverse_b(transform_b(z))
    max_err = float(np.max(np.abs(zz[~singular] - z[~singular])))
    if max_err > 1e-10:
        problems.append(f"round-trip error {max_err:.2e} > 1e-10")
    if singular.mean() > 0.01:
        problems.append(f"too many singular rows flagged ({singular.mean():.4f})")
    ok = not problems
    detail = (
        f"P(T=1) {p_hat:.4f} vs {p_true:.4f}; round-trip max err {max_err:.2e} "
        f"({int(singular.sum())} singular rows excluded)"
    )
    _report(6, "simulation fidelity", ok, detail + ("; " + "; ".join(problems) if problems else ""))
    assert ok, "; ".join(problems)


# --- criterion 7: CLI determinism ----------------------------------------------

def test_criterion_7_cli_determinism(tmp_path):
    def run(cmd, text):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(text)
        rc = cli.main([cmd, "--config", str(cfg)])
        assert rc == 0, f"{cmd} failed"

    data = tmp_path / "d.csv"
    outputs = {
        "simulate": [data],
        "estimate": [tmp_path / "est.json"],
        "replicate": [tmp_path / "mc.csv", tmp_path / "mc.json"],
        "grid-select": [tmp_path / "grid.csv", tmp_path / "grid.json"],
        "report": [tmp_path / "rep.txt", tmp_path / "rep-plot.csv"],
    }
    configs = {
        "simulate": f"n=250, seed=5, out={data}",
        "estimate": (
            f"input={data}, out={outputs['estimate'][0]}, seed=1, "
            "estimators=ipw;ht;bdr-wls;bdr-nr;semipar, prop_spec=1+z1+z2+z3+z4, "
            "out_spec=1+z1+z2+z3+z4, v_spec=1+z1+z2+z3+z4"
        ),
        "replicate": (
            f"n=150, R=8, seed=3, out={outputs['replicate'][0]}, estimators=bdr-wls;ipw, "
            "prop_spec=1+z1+z2+z3+z4, out_spec=1+z1+z2+z3+z4"
        ),
        "grid-select": (
            f"input={data}, out={outputs['grid-select'][0]}, seed=7, B=60, "
            "rules=sd;range;joint;cv;wald;oracle, c=0;2, tau_true=0.0"
        ),
        "report": (
            f"input={outputs['grid-select'][1]}, out={outputs['report'][0]}, "
            f"plot_out={outputs['report'][1]}"
        ),
    }
    first = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for cmd in ("simulate", "estimate", "replicate", "grid-select", "report"):
            run(cmd, configs[cmd])
            first[cmd] = [p.read_bytes() for p in outputs[cmd]]
        mismatches = []
        for cmd in ("simulate", "estimate", "replicate", "grid-select", "report"):
            run(cmd, configs[cmd])
            again = [p.read_bytes() for p in outputs[cmd]]
            if again != first[cmd]:
                mismatches.append(cmd)
    ok = not mismatches
    detail = "all five commands byte-identical on rerun" if ok else f"mismatch in {mismatches}"
    _report(7, "CLI determinism", ok, detail)
    assert ok, detail
