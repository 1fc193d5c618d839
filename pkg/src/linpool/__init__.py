"""Linear pooling of sample covariance matrices across classes.

The main entry points are :func:`pool` (multi-class pooling),
:func:`multitarget_pool` (single-class shrinkage towards several targets)
and :func:`backtest` (minimum variance portfolios on a sliding window).
"""

from .dataset import ClassCollection, Dataset
from .errors import (
    ConditioningError,
    ConfigError,
    DataError,
    InfeasibleError,
    InsufficientDataError,
    InvalidModelError,
    LinpoolError,
    NotStrictlyConvexError,
    NumericalError,
    ShapeError,
    UnsupportedClosedFormError,
)
from .estimators import (
    ClassStatistics,
    PoolingStatistics,
    class_statistics,
    delta_estimate,
    kurtosis_estimate,
    pooling_statistics,
    sample_covariance,
    scale_estimate,
    spatial_median,
    sphericity_estimate,
    sscm_shape,
    zou_correction,
)
from .models import CovarianceModel, EllipticalLaw, materialize, sample, sphericity, sphericity_closed_form
from .multitarget import TargetSpec, bartz_estimate, build_target, multitarget_pool
from .pooling import CoefficientSet, PoolingConfig, mse_objective, pool, solve_constrained, solve_unconstrained
from .portfolio import BacktestConfig, ReturnsPanel, backtest, gmvp_weights, ingest_prices
from .qp import QpProblem, QpResult, solve_box_eq, solve_small
from .simulator import ExperimentSpec, run_nmse, run_sscm_asymptotics

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "ClassCollection",
    "ClassStatistics",
    "CoefficientSet",
    "ConditioningError",
    "ConfigError",
    "CovarianceModel",
    "DataError",
    "Dataset",
    "EllipticalLaw",
    "ExperimentSpec",
    "InfeasibleError",
    "InsufficientDataError",
    "InvalidModelError",
    "LinpoolError",
    "NotStrictlyConvexError",
    "NumericalError",
    "PoolingConfig",
    "PoolingStatistics",
    "QpProblem",
    "QpResult",
    "ReturnsPanel",
    "ShapeError",
    "TargetSpec",
    "UnsupportedClosedFormError",
    "backtest",
    "bartz_estimate",
    "build_target",
    "class_statistics",
    "delta_estimate",
    "gmvp_weights",
    "ingest_prices",
    "kurtosis_estimate",
    "materialize",
    "mse_objective",
    "multitarget_pool",
    "pool",
    "pooling_statistics",
    "run_nmse",
    "run_sscm_asymptotics",
    "sample",
    "sample_covariance",
    "scale_estimate",
    "solve_box_eq",
    "solve_constrained",
    "solve_small",
    "solve_unconstrained",
    "spatial_median",
    "sphericity",
    "sphericity_closed_form",
    "sphericity_estimate",
    "sscm_shape",
    "zou_correction",
]
