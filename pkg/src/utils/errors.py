# src/utils/errors.py
"""Exception hierarchy shared by every dyno module."""
from __future__ import annotations


class DynoError(Exception):
    """Base class for all errors raised by the lab."""


class InvalidArgumentError(DynoError, ValueError):
    """An argument violates an operation's precondition (shape, range, bounds)."""


class DegenerateDensityError(InvalidArgumentError):
    """A log-density was requested for a transition with zero standard deviation."""


class PreconditionError(DynoError, RuntimeError):
    """Operation called in a state it does not support (stale tape, missing advantages)."""


class NonFiniteError(DynoError, FloatingPointError):
    """NaN or inf met in a loss, gradient or objective; training aborts."""


class ResourceLimitError(DynoError, MemoryError):
    """A configured resource cap would be exceeded."""


class GradientCheckError(DynoError, AssertionError):
    """Analytic gradients disagree with central differences."""


class FormatError(DynoError, ValueError):
    """A binary artifact has a bad magic, version or layout."""


class ConfigHashMismatchError(DynoError):
    """An artifact was produced under a different run configuration."""
