"""Exception hierarchy."""


class YieldOptError(Exception):
    """Base class for all package errors."""


class ConfigurationError(YieldOptError, ValueError):
    """Invalid parameters: non-SPD covariance, bad steps, dimension mismatch."""


class DomainError(YieldOptError, ValueError):
    """A model was evaluated outside its physical domain."""


class DegenerateTruncationError(YieldOptError, RuntimeError):
    """Rejection sampling accepts too few proposals to be practical."""


class SurrogateFitError(YieldOptError, RuntimeError):
    """The GP kernel matrix could not be factorized even with maximal jitter."""
