"""Finite element heterogeneous multiscale method for Maxwell's equations in dispersive media.

Periodic micro cell problems (static and Sobolev-type evolution) give effective tensors M, R and
memory kernels G, J; a Nedelec macro discretisation with Crank-Nicolson time stepping and a
trapezoidal convolution integrates the effective integro-differential system.
"""

__version__ = "0.1.0"

from .coefficients import (ConstantModel, DebyeModel, LaminateModel, Sinusoid, SmoothPeriodicModel,  # noqa: E402
                           TwoPhase, isotropic_constant)
from .config import ScenarioConfig, load_config, parse_config  # noqa: E402
from .errors import (ConfigError, DegenerateFitError, FEHMMError, InvariantViolation,  # noqa: E402
                     NumericalError, ScenarioError)

__all__ = [
    "ConfigError", "ConstantModel", "DebyeModel", "DegenerateFitError", "FEHMMError", "InvariantViolation",
    "LaminateModel", "NumericalError", "ScenarioConfig", "ScenarioError", "Sinusoid", "SmoothPeriodicModel",
    "TwoPhase", "isotropic_constant", "load_config", "parse_config",
]
