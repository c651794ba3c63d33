"""Forward variance kernels: simulation, contrast estimation and studentized inference."""

__version__ = "0.1.0"

from .contrast import ContrastConfig, EstimationResult, contrast_U, minimize_contrast, sigma_hat
from .errors import ConfigError, DataError, FwdVarError, InferenceError, NumericalError
from .inference import covariance_estimate, infer
from .kernels import CustomKernel, Family, KernelSpec, ParamBox
from .simulate import SimConfig, simulate_brownian, simulate_surface
from .surface import (
    CumulativeVarianceSurface,
    ForwardVarianceCurve,
    MaturityGrid,
    TimeGrid,
    default_d,
    read_surface,
    validate_surface,
    write_surface,
)

__all__ = [
    "ConfigError",
    "ContrastConfig",
    "CumulativeVarianceSurface",
    "CustomKernel",
    "DataError",
    "EstimationResult",
    "Family",
    "ForwardVarianceCurve",
    "FwdVarError",
    "InferenceError",
    "KernelSpec",
    "MaturityGrid",
    "NumericalError",
    "ParamBox",
    "SimConfig",
    "TimeGrid",
    "contrast_U",
    "covariance_estimate",
    "default_d",
    "infer",
    "minimize_contrast",
    "read_surface",
    "sigma_hat",
    "simulate_brownian",
    "simulate_surface",
    "validate_surface",
    "write_surface",
]
