"""Robust M-estimation forecast reconciliation for hierarchical time series."""

from .covariance import (
    CovarianceDesign,
    CovMatrix,
    ResidualPanel,
    estimate_W1,
    matrix_sqrt,
    realize_design,
    shrinkage_lambda,
)
from .errors import NumericError, RomeHtsError, StructuralError, ValidationError
from .evaluate import EvalWindow, pct_change, rmse
from .hierarchy import (
    Hierarchy,
    HierarchySpec,
    build_hierarchy,
    constraint_matrix,
    fanout_hierarchy,
    level_indices,
)
from .loss import LossSpec, loss_derivative, loss_value, lqa_weight, pooled_sigma
from .reconcile import (
    BaseForecastSet,
    ReconcileResult,
    ReconcilerConfig,
    combination_weights,
    combine_forecasts,
    mint_gmatrix,
    reconcile_bottom_up,
    reconcile_mint,
    reconcile_rome,
    rome_gmatrix_step,
)
from .simulate import (
    ErrorSpec,
    ExperimentReport,
    Method,
    ScenarioSpec,
    SimPanel,
    fit_base_forecaster,
    fit_base_forecasts,
    generate_panel,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "BaseForecastSet",
    "CovMatrix",
    "CovarianceDesign",
    "ErrorSpec",
    "EvalWindow",
    "ExperimentReport",
    "Hierarchy",
    "HierarchySpec",
    "LossSpec",
    "Method",
    "NumericError",
    "ReconcileResult",
    "ReconcilerConfig",
    "ResidualPanel",
    "RomeHtsError",
    "ScenarioSpec",
    "SimPanel",
    "StructuralError",
    "ValidationError",
    "build_hierarchy",
    "combination_weights",
    "combine_forecasts",
    "constraint_matrix",
    "estimate_W1",
    "fanout_hierarchy",
    "fit_base_forecaster",
    "fit_base_forecasts",
    "generate_panel",
    "level_indices",
    "loss_derivative",
    "loss_value",
    "lqa_weight",
    "matrix_sqrt",
    "mint_gmatrix",
    "pct_change",
    "pooled_sigma",
    "realize_design",
    "reconcile_bottom_up",
    "reconcile_mint",
    "reconcile_rome",
    "rmse",
    "rome_gmatrix_step",
    "run_experiment",
    "shrinkage_lambda",
    "__version__",
]
