"""Sparse estimation of spatiotemporal dynamic panel models.

The observation model couples a contemporaneous spatial lag through an
estimated weight matrix, per-location temporal autoregression, and
exogenous regressors; estimation is L1-penalized maximum likelihood under
stationarity-friendly constraints.  See the README for the full tour.
"""

from importlib import metadata as _metadata

from .crossval import (
    CvPlan,
    CvResult,
    FoldScore,
    block_split,
    cv_score,
    default_grid,
    grid_search,
    scores_to_rows,
)
from .errors import (
    DimensionError,
    DomainError,
    EstimationError,
    FeasibilityError,
    IngestError,
    NumericalError,
    SearchError,
    SingularityError,
)
from .evaluate import (
    BaselineResult,
    McConfig,
    McSummary,
    compare_models,
    fit_ols,
    fit_var1,
    full_model_rmse,
    group_metrics,
    information_criteria,
    monte_carlo,
    spatiotemporal_scores,
)
from .inference import (
    InferenceResult,
    covariance_from_information,
    finite_difference_hessian,
    numerical_hessian,
    post_selection,
    precision_diagnostic,
    refit_unpenalized,
    support,
)
from .model import (
    ModelParams,
    PanelData,
    PenaltyConfig,
    StationarityReport,
    Support,
    log_likelihood,
    pack_params,
    penalized_objective,
    predict_one_step,
    residuals,
    stationarity_check,
    unpack_params,
)
from .optimize import (
    FitResult,
    ObjectiveGradient,
    SolverOptions,
    fit,
    initialize,
    objective_gradient,
)
from .panel_io import (
    fourier_design,
    fourier_panel_design,
    impute_backward_forward,
    ingest,
    read_fit_json,
    read_panel_csv,
    write_fit_json,
    write_panel_csv,
)
from .simulate import (
    DgpConfig,
    make_true_params,
    queen_lattice_weights,
    simulate_dataset,
    simulate_panel,
)

try:
    __version__ = _metadata.version("stlasso")
except _metadata.PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.0.0"

__all__ = [
    "BaselineResult",
    "CvPlan",
    "CvResult",
    "DgpConfig",
    "DimensionError",
    "DomainError",
    "EstimationError",
    "FeasibilityError",
    "FitResult",
    "FoldScore",
    "IngestError",
    "InferenceResult",
    "McConfig",
    "McSummary",
    "ModelParams",
    "NumericalError",
    "ObjectiveGradient",
    "PanelData",
    "PenaltyConfig",
    "SearchError",
    "SingularityError",
    "SolverOptions",
    "StationarityReport",
    "Support",
    "block_split",
    "compare_models",
    "covariance_from_information",
    "cv_score",
    "default_grid",
    "finite_difference_hessian",
    "fit",
    "fit_ols",
    "fit_var1",
    "fourier_design",
    "fourier_panel_design",
    "full_model_rmse",
    "grid_search",
    "group_metrics",
    "impute_backward_forward",
    "information_criteria",
    "ingest",
    "initialize",
    "log_likelihood",
    "make_true_params",
    "monte_carlo",
    "numerical_hessian",
    "objective_gradient",
    "pack_params",
    "penalized_objective",
    "post_selection",
    "precision_diagnostic",
    "predict_one_step",
    "queen_lattice_weights",
    "read_fit_json",
    "read_panel_csv",
    "refit_unpenalized",
    "residuals",
    "scores_to_rows",
    "simulate_dataset",
    "simulate_panel",
    "spatiotemporal_scores",
    "stationarity_check",
    "support",
    "unpack_params",
    "write_fit_json",
    "write_panel_csv",
]
