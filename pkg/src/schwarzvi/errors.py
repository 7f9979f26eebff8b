"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid sizes, ratios, flags, or otherwise inconsistent setup data."""


class SolverError(RuntimeError):
    """A linear or quadratic solve failed to meet its contract."""

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class NonConvergenceError(SolverError):
    """Iteration cap reached before the stopping criterion; carries the last iterate."""


class ConstructionError(RuntimeError):
    """The sign-preserving patch interpolation failed its verification sweep.

    ``vertex`` holds a counterexample fine-grid vertex (integer lattice
    coordinates) when one is available.
    """

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex
