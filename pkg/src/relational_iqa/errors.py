"""Exception hierarchy shared by every relational_iqa module."""

from __future__ import annotations


class RelationalIqaError(RuntimeError):
    """Base class for all errors raised by relational_iqa."""


class ValidationError(RelationalIqaError):
    """Raised when an input, file or configuration value is invalid."""


class NumericalError(RelationalIqaError):
    """Raised when a computation fails at runtime (divergence, bad gradients)."""


class DimensionMismatchError(ValidationError):
    """Raised when rasters or tensors that must agree in shape do not."""


class DivergenceError(NumericalError):
    """Raised when a training loss becomes non-finite."""
