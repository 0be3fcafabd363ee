"""Radial nonlinear Schrodinger laboratory on rotationally symmetric manifolds."""

from .errors import (ConfigError, DomainError, DomainTooSmall, NumericalError, RangeError,
                     UnsupportedError)
from .geometry import ManifoldProfile, positivity_certificate, effective_potential
from .exponents import solve_exponents, bootstrap_check
from .grid import RadialGrid, FieldState, gaussian_data, bump_data, mass, energy
from .evolution import Integrator, Trajectory
from .config import ExperimentConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DomainError", "DomainTooSmall", "NumericalError", "RangeError", "UnsupportedError",
    "ManifoldProfile", "positivity_certificate", "effective_potential",
    "solve_exponents", "bootstrap_check",
    "RadialGrid", "FieldState", "gaussian_data", "bump_data", "mass", "energy",
    "Integrator", "Trajectory", "ExperimentConfig",
]
