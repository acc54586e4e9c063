"""Sparse multi-source transfer regression: L0 (SOTL) and L1 (S-JETS) fits on a stacked system."""

from .datamodel import (
    CoefficientEstimate,
    DataError,
    FitResult,
    GroupData,
    MultiSourceProblem,
    SimMetrics,
    make_problem,
)
from .l0solve import L0Options, exhaustive_best_subset, fit_support_size
from .l1solve import LassoPathConfig, coordinate_descent, lasso_path, select_lambda_cv
from .select import extract_target, fit_sjets, fit_sotl, hbic
from .stacking import StackedSystem, build_stacked, grouped_objective, stack_coefficients

__version__ = "0.1.0"

__all__ = [
    "CoefficientEstimate",
    "DataError",
    "FitResult",
    "GroupData",
    "L0Options",
    "LassoPathConfig",
    "MultiSourceProblem",
    "SimMetrics",
    "StackedSystem",
    "build_stacked",
    "coordinate_descent",
    "exhaustive_best_subset",
    "extract_target",
    "fit_sjets",
    "fit_sotl",
    "fit_support_size",
    "grouped_objective",
    "hbic",
    "lasso_path",
    "make_problem",
    "select_lambda_cv",
    "stack_coefficients",
]
