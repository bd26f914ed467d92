"""Monte Carlo bias table over the model-correctness quadrants.

Replicates the benchmark and summarizes every estimator's bias, variance and
CI coverage for each (propensity, outcome) correctness combination.  A small
replication count keeps the demo fast; the acceptance suite runs the full
R = 500 version.  Note the finite-sample bias of the NR variant when only the
propensity is right: the overlap weights are extremely variable in this
design, and the bias disappears as n grows.
"""

import warnings

from drkit.simulate import (
    DgpConfig,
    bdr_estimator,
    run_replications,
    semipar_estimator,
    x_linear_spec,
    z_linear_spec,
)

warnings.filterwarnings("ignore")

cfg = DgpConfig(n=1000, seed=2718)
R = 100
zs, xs = z_linear_spec(), x_linear_spec()

for plabel, ps in (("correct", zs), ("wrong", xs)):
    for olabel, os_ in (("correct", zs), ("wrong", xs)):
        suite = {
            m.lower(): bdr_estimator(m, ps, os_)
            for m in ("REG", "WLS", "NR", "ITER-WLS", "ITER-REG")
        }
        suite["semipar"] = semipar_estimator(os_, os_, ps)
        s = run_replications(cfg, R, suite)
        print(f"\npropensity {plabel}, outcome {olabel} (R={R}, truth 0):")
        for r in s.rows:
            cov = "   - " if r.coverage is None else f"{r.coverage:.2f}"
            print(
                f"  {r.estimator:10s} bias {r.mc_bias:+7.3f}  "
                f"var {r.mc_variance:8.3f}  mse {r.mc_mse:8.3f}  cover {cov}"
            )
