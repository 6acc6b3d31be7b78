"""Error types raised across the package."""


class SwedgeError(Exception):
    """Base class for package errors."""


class DesignError(SwedgeError, ValueError):
    """Invalid stepped-wedge design or probability query."""


class EnumerationTooLarge(SwedgeError):
    """Exact enumeration would exceed the configured cap."""


class DataError(SwedgeError, ValueError):
    """Trial data inconsistent with the declared design."""


class RankDeficientError(SwedgeError, ValueError):
    """Regression design matrix is not of full column rank."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class UnidentifiedError(SwedgeError, ValueError):
    """A period-specific effect cannot be estimated from the data."""


class SeparationError(SwedgeError, ValueError):
    """Logistic fit does not converge because of complete separation."""


class InsufficientClustersError(SwedgeError, ValueError):
    """Too few clusters for a cluster-robust reference distribution."""


class SimulationConfigError(SwedgeError, ValueError):
    """Invalid simulation configuration."""


class ConvergenceError(SwedgeError):
    """Iterative fit did not converge; ``trace`` holds the objective history."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
