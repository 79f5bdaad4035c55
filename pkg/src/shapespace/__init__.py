"""Convolutional networks that map line drawings into psychological similarity spaces."""

from .errors import (ConfigError, DataError, DivergenceError, EvaluationError, FoldLeakageError, ShapeError,
                     ShapespaceError, ValidationError)
from .tensor import Tensor, parameter

__version__ = "0.1.0"

__all__ = ["Tensor", "parameter", "ShapespaceError", "ShapeError", "ValidationError", "ConfigError", "DataError",
           "EvaluationError", "DivergenceError", "FoldLeakageError", "__version__"]
