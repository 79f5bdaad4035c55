"""Exception types shared across the package."""


class ShapespaceError(Exception):
    """Base class for all package errors."""


class ShapeError(ShapespaceError, ValueError):
    """Tensor extents are inconsistent with an operation."""


class ValidationError(ShapespaceError, ValueError):
    """An argument lies outside its documented domain."""


class ConfigError(ShapespaceError, ValueError):
    """A configuration or policy is inconsistent."""


class DataError(ShapespaceError, ValueError):
    """Input data is malformed, missing or insufficient."""


class EvaluationError(ShapespaceError, ArithmeticError):
    """A function evaluated to a non-finite value."""


class DivergenceError(ShapespaceError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss in epoch {epoch}")


class FoldLeakageError(ShapespaceError):
    """An augmented instance sits in a different fold than its origin."""

    def __init__(self, instance_id, message=None):
        self.instance_id = instance_id
        super().__init__(message or f"fold leakage detected for instance {instance_id!r}")
