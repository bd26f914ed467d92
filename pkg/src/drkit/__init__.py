"""drkit: double-robust treatment-effect estimation toolkit.

Library surface: dataset and basis types (:mod:`drkit.core`), IWLS solvers
(:mod:`drkit.glm`), the double-robust difference estimators
(:mod:`drkit.estimators`), the semiparametric effect-modification estimator
(:mod:`drkit.semipar`), plug-in variance theory (:mod:`drkit.variance`), the
simulation benchmark and Monte Carlo harness (:mod:`drkit.simulate`), DR-grid
model selection (:mod:`drkit.model_select`) and a batch CLI (:mod:`drkit.cli`).
"""

from .core import (
    BasisSpec,
    Dataset,
    DataError,
    EstimateReport,
    FittedOutcome,
    FittedPropensity,
    design_matrix,
    evaluate_basis,
    read_dataset_csv,
    register_basis_transform,
    validate_dataset,
    write_dataset_csv,
)
from .glm import IwlsConfig, NumericError, fit_logistic_ml, fit_outcome
from .estimators import (
    fit_m_nr,
    fit_m_reg,
    fit_m_wls,
    fit_pi_iter,
    fit_propensity,
    mu_bdr,
    mu_ht,
    mu_ipw,
    tau_bdr,
    tau_ht,
    tau_ipw,
)
from .semipar import (
    SemiparFit,
    fit_semipar,
    fit_wop_propensity,
    gamma_hat,
    residual_projection,
    tau_from_semipar,
    verify_d_equals_k_equivalence,
)
from .variance import sandwich, theorem1_closed_forms, var_bdr
from .simulate import DgpConfig, gen_dataset, inverse_b, run_replications, transform_b
from .model_select import (
    SelectionGrid,
    attach_bootstrap_covariance,
    build_grid,
    oracle,
    select_cv,
    select_joint,
    select_range,
    select_sd,
    select_wald,
    sensitivity_report,
)

__version__ = "0.1.0"
