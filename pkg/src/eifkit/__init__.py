"""Influence-function toolkit for two untreated-outcome functionals.

The package computes, for finite-support joint laws of (covariates,
binary treatment, outcome), the mean untreated outcome and its
treated-subpopulation analog, together with their efficient influence
functions, one-step corrected estimators, exact second-order remainders,
and seeded Monte Carlo studies of coverage and convergence rates.
"""

from .distributions import (
    CheckReport,
    FiniteDistribution,
    Observation,
    SubmodelMix,
    distribution_from_dict,
    distribution_to_dict,
    eif_psi,
    eif_theta,
    g_of,
    load_distribution,
    mix,
    pathwise_derivative_check,
    psi_of,
    q_of,
    save_distribution,
    theta_of,
)
from .learners import (
    Dataset,
    FittedNuisance,
    LearnerSpec,
    fit_nuisance,
    fit_outcome,
    fit_propensity,
    oracle_rate_nuisance,
    truncate_propensity,
)
from .estimators import (
    EstimateReport,
    FoldPlan,
    crossfit,
    empirical_distribution,
    ipw_psi,
    onestep_psi,
    onestep_theta,
    plugin_psi,
    saturated_nuisance,
    variance_and_ci,
)
from .decomposition import (
    DecompositionReport,
    RateSweepReport,
    RemainderReport,
    decompose_error,
    remainder_exact_psi,
    remainder_exact_theta,
    remainder_rate_sweep,
    truth_functions,
)
from .montecarlo import (
    DR_ARMS,
    CoverageSummary,
    DGPSpec,
    DrConsistencyReport,
    EstimatorConfig,
    RateExperimentReport,
    ReplicationResult,
    default_logistic_linear,
    draw_dataset,
    dr_arm_specs,
    generate,
    generate_with_counterfactual,
    ks_critical_value,
    quadrature_distribution,
    run_coverage,
    run_dr_consistency,
    run_rate_experiment,
)
from . import errors

__version__ = "0.1.0"

__all__ = [
    "CheckReport",
    "FiniteDistribution",
    "Observation",
    "SubmodelMix",
    "distribution_from_dict",
    "distribution_to_dict",
    "eif_psi",
    "eif_theta",
    "g_of",
    "load_distribution",
    "mix",
    "pathwise_derivative_check",
    "psi_of",
    "q_of",
    "save_distribution",
    "theta_of",
    "Dataset",
    "FittedNuisance",
    "LearnerSpec",
    "fit_nuisance",
    "fit_outcome",
    "fit_propensity",
    "oracle_rate_nuisance",
    "truncate_propensity",
    "EstimateReport",
    "FoldPlan",
    "crossfit",
    "empirical_distribution",
    "ipw_psi",
    "onestep_psi",
    "onestep_theta",
    "plugin_psi",
    "saturated_nuisance",
    "variance_and_ci",
    "DecompositionReport",
    "RateSweepReport",
    "RemainderReport",
    "decompose_error",
    "remainder_exact_psi",
    "remainder_exact_theta",
    "remainder_rate_sweep",
    "truth_functions",
    "CoverageSummary",
    "DR_ARMS",
    "DGPSpec",
    "DrConsistencyReport",
    "EstimatorConfig",
    "RateExperimentReport",
    "ReplicationResult",
    "default_logistic_linear",
    "draw_dataset",
    "dr_arm_specs",
    "generate",
    "generate_with_counterfactual",
    "ks_critical_value",
    "quadrature_distribution",
    "run_coverage",
    "run_dr_consistency",
    "run_rate_experiment",
    "errors",
    "__version__",
]
