"""
Core utilities and infrastructure modules
"""

from .errors import (
    StickyLabError,
    ConfigError,
    InputError,
    GridMismatchError,
    PreconditionError,
    NumericalError,
    BlowUpError,
    OrderingError,
    ConvergenceError,
    AcceptanceError,
)
from .logging import configure_logging
from .rng import species_generators, species_generator


__all__ = [
    "StickyLabError",
    "ConfigError",
    "InputError",
    "GridMismatchError",
    "PreconditionError",
    "NumericalError",
    "BlowUpError",
    "OrderingError",
    "ConvergenceError",
    "AcceptanceError",
    "configure_logging",
    "species_generators",
    "species_generator",
]
