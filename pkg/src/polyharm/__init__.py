"""Numerical engine for higher-order tension fields of maps between
Riemannian chart models: the recursive tension tower, polyharmonic and
fourth-order Eells-Sampson tension fields, second-order reduced systems with
their inequality witnesses, discretized energies with variational
consistency checks, and the equivariant latitude-sphere reduction."""

__version__ = "0.1.0"

from .errors import (
    CapabilityError,
    ChartDomainError,
    ConfigurationError,
    DegenerateInputError,
    NumericalContractError,
    PolyharmError,
)

__all__ = [
    "__version__",
    "PolyharmError",
    "ChartDomainError",
    "CapabilityError",
    "ConfigurationError",
    "DegenerateInputError",
    "NumericalContractError",
]
