"""Bounds on treatment effects under sample selection with stochastic monotonicity."""
from .core import BoundsResult, CiResult, IdentifiedPrimitives, SelectionSample, identified_primitives, validate_sample
from .errors import BoundsError, ConfigError, DataError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "BoundsResult", "CiResult", "IdentifiedPrimitives", "SelectionSample",
    "identified_primitives", "validate_sample",
    "BoundsError", "ConfigError", "DataError", "NumericalError", "__version__",
]
