"""Exception hierarchy shared by all degensolve modules."""


class DegenSolveError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(DegenSolveError, ValueError):
    """An argument is outside the documented domain of an operation."""


class DataError(DegenSolveError, ValueError):
    """Input data (coefficients, samples) is malformed or non-finite."""


class NumericalError(DegenSolveError, RuntimeError):
    """An iterative method failed to converge.

    ``state`` carries whatever the failing routine could salvage: the last
    bracket of a scalar root search, the last Newton iterate and its norm
    history, and so on.
    """

    def __init__(self, message, **state):
        super().__init__(message)
        self.state = state


class SingularPointError(NumericalError):
    """Evaluation requested at a point where the formula degenerates."""


class NondegeneracyViolation(DegenSolveError):
    """No admissible box was found around a point.

    ``best`` is the candidate box that failed last and ``witness`` the face
    sample where positivity broke down.
    """

    def __init__(self, message, best=None, witness=None):
        super().__init__(message)
        self.best = best
        self.witness = witness


class ConstructionError(DegenSolveError):
    """A barrier parameter sweep ran out of budget."""

    def __init__(self, message, **state):
        super().__init__(message)
        self.state = state


class ConfigError(DegenSolveError, ValueError):
    """Invalid run configuration; ``key`` names the offending key path."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class EmissionError(DegenSolveError, OSError):
    """Writing run outputs failed."""
