"""Exception types raised across the package."""

from __future__ import annotations


class FusionError(Exception):
    """Base class for every error raised by :mod:`fusion`."""


class DimensionError(FusionError, ValueError):
    pass


class BackwardBeforeForwardError(FusionError, RuntimeError):
    pass


class InvalidTreatmentError(FusionError, ValueError):
    pass


class SourceError(FusionError, ValueError):
    """A batch or dataset has rows from the wrong source (or none from a required one)."""


class EmptyBatchError(FusionError, ValueError):
    pass


class EmptyArmError(FusionError, ValueError):
    pass


class SingleArmError(FusionError, ValueError):
    pass


class LengthMismatchError(FusionError, ValueError):
    pass


class NotSyntheticError(FusionError, ValueError):
    pass


class NoStructuralSetError(FusionError, ValueError):
    pass


class ConfigError(FusionError, ValueError):
    pass


class DivergenceError(FusionError, FloatingPointError):
    """Training produced a non-finite objective; ``trace`` holds the records up to that point."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
