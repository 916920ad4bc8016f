"""Penalized additive models with difference-penalty smoothing for ordinal predictors."""

from ._version import __version__
from .design import (
    ContinuousTerm,
    DesignBlock,
    OrdinalTerm,
    absorb_constraint,
    build_diff_matrix,
    build_dummy_basis,
    build_ordinal_block,
    build_pspline_block,
    mixed_reparam,
    mixed_reparam_inverse,
    penalty_value,
)
from .family import Binomial, Family, Gaussian, get_family
from .fitter import FittedGam, PenalizedProblem, Term, edf_per_term, penalized_loglik, pirls_fit
from .inference import (
    IntervalBand,
    SmoothTestResult,
    SummaryReport,
    credible_band,
    summarize,
    term_values,
    wald_smooth_test,
)
from .model import FactorTerm, ModelSpec, ParametricTerm, build_problem
from .simulate import (
    SimReport,
    SimScenario,
    generate_replicate,
    run_coverage,
    run_mse,
    run_null_calibration,
    run_size_power,
    truth_function,
)
from .smoothness import optimize_lambda, reml_criterion

__all__ = [
    "__version__",
    "Binomial",
    "ContinuousTerm",
    "DesignBlock",
    "FactorTerm",
    "Family",
    "FittedGam",
    "Gaussian",
    "IntervalBand",
    "ModelSpec",
    "OrdinalTerm",
    "ParametricTerm",
    "PenalizedProblem",
    "SimReport",
    "SimScenario",
    "SmoothTestResult",
    "SummaryReport",
    "Term",
    "absorb_constraint",
    "build_diff_matrix",
    "build_dummy_basis",
    "build_ordinal_block",
    "build_problem",
    "build_pspline_block",
    "credible_band",
    "edf_per_term",
    "generate_replicate",
    "get_family",
    "mixed_reparam",
    "mixed_reparam_inverse",
    "optimize_lambda",
    "penalized_loglik",
    "penalty_value",
    "pirls_fit",
    "reml_criterion",
    "run_coverage",
    "run_mse",
    "run_null_calibration",
    "run_size_power",
    "summarize",
    "term_values",
    "truth_function",
    "wald_smooth_test",
]
