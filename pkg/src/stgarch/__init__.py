"""Spatiotemporal GARCH: local weighted QMLE, residual covariance fitting and volatility kriging."""

from stgarch.core import (
    ConstraintConfig,
    CovarianceModel,
    GarchOrder,
    Location,
    Panel,
    ParameterPoint,
    ParameterSurface,
    unconditional_variance,
    validate_parameters,
)
from stgarch.covfit import extract_residuals, fit_covariance_mle
from stgarch.estimate import KernelSpec, LocalFit, OptimizerConfig, fit_local, fit_surface
from stgarch.estimators import LocalGARCH, SpatialCovariance, STGARCHKriger
from stgarch.krige import (
    SingularSystemError,
    kriging_weights,
    ma_coefficients,
    predict_squared_process,
    predictor_covariance,
)
from stgarch.simulate import random_bspline_surface, simulate_stgarch

__version__ = "0.1.0"

__all__ = [
    "ConstraintConfig",
    "CovarianceModel",
    "GarchOrder",
    "KernelSpec",
    "LocalFit",
    "LocalGARCH",
    "Location",
    "OptimizerConfig",
    "Panel",
    "ParameterPoint",
    "ParameterSurface",
    "STGARCHKriger",
    "SingularSystemError",
    "SpatialCovariance",
    "extract_residuals",
    "fit_covariance_mle",
    "fit_local",
    "fit_surface",
    "kriging_weights",
    "ma_coefficients",
    "predict_squared_process",
    "predictor_covariance",
    "random_bspline_surface",
    "simulate_stgarch",
    "unconditional_variance",
    "validate_parameters",
]
