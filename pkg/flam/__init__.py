"""FLAM: fused lasso additive model.

Sparse additive regression with piecewise-constant components. Each feature's
fitted function is a fused-lasso step function over the sorted feature values,
and a group penalty zeroes whole features.

Usage:
    from flam import Dataset, PenaltySpec, flam_bcd, flam_path

    data = Dataset.from_arrays(y, X)
    path = flam_path(data, alpha=1.0)
    fit = flam_bcd(data, PenaltySpec(lam=path.lambdas[10], alpha=1.0))
"""

from flam.errors import (
    DataError,
    FlamError,
    InvalidArgumentError,
    ModelFormatError,
    NumericFailureError,
    PreconditionError,
)
from flam.models import (
    AdditiveModel,
    Dataset,
    FitConfig,
    FitPath,
    FlamFit,
    GlmConfig,
    PenaltySpec,
    StepFunction,
)
from flam.services.fit import debias_refit, flam_bcd, flam_path, objective
from flam.services.glm import ggd_solve, logistic_flam, logistic_path, predict_response
from flam.services.inference import df_flam, df_knots, df_monte_carlo, knot_count
from flam.services.modelsel import (
    additive_model,
    cross_validate,
    lambda_sparse_threshold,
    step_functions,
)
from flam.services.solvers import fused_lasso, fused_lasso_1d

__all__ = [
    # Errors
    "FlamError",
    "InvalidArgumentError",
    "PreconditionError",
    "NumericFailureError",
    "DataError",
    "ModelFormatError",
    # Types
    "Dataset",
    "PenaltySpec",
    "FitConfig",
    "GlmConfig",
    "FlamFit",
    "FitPath",
    "StepFunction",
    "AdditiveModel",
    # Fitting
    "flam_bcd",
    "flam_path",
    "objective",
    "debias_refit",
    "ggd_solve",
    "logistic_flam",
    "logistic_path",
    "predict_response",
    "fused_lasso",
    "fused_lasso_1d",
    # Inference and model selection
    "df_flam",
    "df_knots",
    "df_monte_carlo",
    "knot_count",
    "lambda_sparse_threshold",
    "cross_validate",
    "step_functions",
    "additive_model",
]
