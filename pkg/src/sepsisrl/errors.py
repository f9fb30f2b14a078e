"""Exception hierarchy shared by every pipeline stage."""


class SepsisRLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SepsisRLError, ValueError):
    pass


class ImputationError(SepsisRLError, ValueError):
    pass


class FitError(SepsisRLError, ValueError):
    pass


class DomainError(SepsisRLError, ValueError):
    pass


class SplitError(SepsisRLError, ValueError):
    pass


class DataError(SepsisRLError, ValueError):
    pass


class StructuralError(SepsisRLError, ValueError):
    """Shape or architecture mismatch."""


class UsageError(SepsisRLError, RuntimeError):
    """An API was called out of order or with an invalid handle."""


class OptimizerError(SepsisRLError, FloatingPointError):
    pass


class TrainingError(SepsisRLError, FloatingPointError):
    """Training diverged. ``snapshot`` holds the state at the failing step."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class EvaluationError(SepsisRLError, ValueError):
    pass


class ExportError(SepsisRLError, ValueError):
    pass


class DependencyError(SepsisRLError, FileNotFoundError):
    """A pipeline stage is missing an upstream artifact."""
