from ._worldprobe import (
    DataError,
    Error,
    LoocvCurve,
    NumericalError,
    ProbeModel,
    UsageError,
    default_lambda_grid,
    fit_ridge,
    fit_ridge_cv,
    gen_linear,
    load_activations,
    load_targets,
    loo_residuals,
    proximity_error,
    r2,
    spearman,
    tune_lambda_loocv,
    write_activations,
)

__all__ = [
    "DataError",
    "Error",
    "LoocvCurve",
    "NumericalError",
    "ProbeModel",
    "UsageError",
    "default_lambda_grid",
    "fit_ridge",
    "fit_ridge_cv",
    "gen_linear",
    "load_activations",
    "load_targets",
    "loo_residuals",
    "proximity_error",
    "r2",
    "spearman",
    "tune_lambda_loocv",
    "write_activations",
]
