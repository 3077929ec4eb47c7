"""Exception hierarchy shared by all mongelab modules."""


class MongeLabError(Exception):
    """Base class for all mongelab errors."""


class ConfigurationError(MongeLabError):
    """Bad grid / experiment configuration (degenerate bounds, unknown keys, ...)."""


class DomainError(MongeLabError):
    """A point or parameter lies outside the admissible domain."""


class InputError(MongeLabError):
    """Invalid problem data (unbalanced masses, mismatched grids, ...)."""


class CapacityError(MongeLabError):
    """Problem size exceeds the desk-scale cap of the exact solver."""


class DegeneracyError(MongeLabError):
    """Potential gradient too close to unit norm for the map formula."""


class NonconvergenceError(MongeLabError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, violation=None, iterations=None):
        super().__init__(message)
        self.violation = violation
        self.iterations = iterations


class TopologyError(MongeLabError):
    """The grid graph cannot route the required flow (disconnected mask)."""


class InternalError(MongeLabError):
    """A should-be-unreachable inconsistency (failed internal invariant)."""
