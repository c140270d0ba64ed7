"""Exception hierarchy shared by all modules."""


class FilmError(Exception):
    """Base class for every error raised by strainedfilm."""


class InvalidInputError(FilmError, ValueError):
    pass


class DomainError(FilmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class CompatibilityError(FilmError, ValueError):
    """A right-hand side or constraint is not compatible with the problem."""


class StateError(FilmError, RuntimeError):
    """An object is used in a state it was not prepared for (e.g. stale field)."""


class NumericError(FilmError, RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class OptimizerStall(NumericError):
    """The incremental minimization made no further progress.

    ``best`` carries the best iterate found so far (a StepResult).
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message, residual=residual)
        self.best = best
