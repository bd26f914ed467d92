"""The semiparametric effect-modification estimator.

Fits gamma(x) = beta' v(x) jointly with a working regression for
H(beta) = Y - T beta'V, using the closed-form solution of the stacked
estimating equations.  Because the propensity enters only through the bounded
factor T - pi(X), units with extreme weights cannot dominate the fit; that is
what buys the "huge savings in variance" over the DR difference estimators
when overlap is poor.
"""

import warnings

import numpy as np

from drkit.semipar import fit_semipar, gamma_hat, tau_from_semipar
from drkit.simulate import DgpConfig, gen_dataset, x_linear_spec, z_linear_spec

warnings.filterwarnings("ignore")

ds = gen_dataset(DgpConfig(n=2000, seed=7))

# correct working models: everything linear in the latent covariates
fit = fit_semipar(ds, z_linear_spec(), z_linear_spec(), z_linear_spec())
print("effect-model coefficients (truth is all zeros):")
print("  beta =", np.round(fit.beta, 4))
print("  estimating-equation norms:", f"{fit.ee_s1_norm:.2e}", f"{fit.ee_s2_norm:.2e}")

print("\nfitted effect at a few covariate rows:")
for i in (0, 1, 2):
    print(f"  gamma_hat(z_{i}) = {gamma_hat(fit, ds.z[i]):+.4f}")

print("\nweighted average effects:")
for weight in ("unit", "omega-op-hat"):
    r = tau_from_semipar(fit, weight=weight)
    print(
        f"  {r.tag:12s} estimate {r.estimate:+.4f}  "
        f"95% CI [{r.ci_lower:+.4f}, {r.ci_upper:+.4f}]"
    )

# the bounded-influence factor: |T - pi| < 1 for every unit, no matter how
# extreme the overlap weights get
resid = np.abs(ds.t - fit.propensity.fitted)
w_max = float((1.0 / np.minimum(fit.propensity.fitted, 1 - fit.propensity.fitted)).max())
print(f"\nmax |T - pi_hat| = {resid.max():.4f} (< 1), max inverse weight = {w_max:.0f}")

# misspecify everything except the propensity: still unbiased under the null,
# since a constant gamma is always inside the effect model's span
fit_x = fit_semipar(ds, x_linear_spec(), x_linear_spec(), z_linear_spec())
r = tau_from_semipar(fit_x)
print(
    f"\nwith X-based (wrong) outcome model and correct propensity: "
    f"estimate {r.estimate:+.4f}, CI [{r.ci_lower:+.4f}, {r.ci_upper:+.4f}]"
)
