"""Exception types shared across the package."""


class CartwaveError(Exception):
    """Base class for package errors."""


class InvalidInputError(CartwaveError, ValueError):
    """An argument violates a documented precondition."""


class SamplingFailureError(CartwaveError, RuntimeError):
    """A rejection sampler exceeded its retry cap."""


class UnsupportedConfigurationError(CartwaveError, ValueError):
    """The requested method does not support this prior/covariance combination."""


class NumericalError(CartwaveError, RuntimeError):
    """A numerical routine failed; the message carries a condition report."""


class MedianTreeError(CartwaveError, RuntimeError):
    """Inclusion probabilities violate ancestry monotonicity beyond tolerance."""


class StuckChainError(CartwaveError, RuntimeError):
    """The tree chain has no valid grow or prune move from its current state."""
