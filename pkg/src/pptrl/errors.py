"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Malformed argument: wrong shape, non-finite value, out-of-range field."""


class IllPosedFitError(ValueError):
    """A regression problem has fewer samples than unknowns."""


class ConditioningError(ArithmeticError):
    """A covariance could not be factorized even after jitter repair."""


class InvalidRotationError(ValueError):
    """A matrix is not a proper rotation within tolerance."""


class SimulationDivergedError(RuntimeError):
    """The simulator produced a non-finite state."""


class CheckpointMismatchError(ValueError):
    """A checkpoint does not match the experiment configuration."""
