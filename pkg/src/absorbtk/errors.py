"""Exception hierarchy shared by all absorbtk modules."""


class AbsorbError(Exception):
    """Base class for every error raised by absorbtk."""


class DomainError(AbsorbError, ValueError):
    """An argument lies outside the domain of an operation."""


class NotPositiveError(DomainError):
    """A matrix expected to be positive semidefinite has a negative eigenvalue."""

    def __init__(self, msg, min_eigenvalue):
        super().__init__(msg)
        self.min_eigenvalue = min_eigenvalue


class NotInAlgebraError(DomainError):
    """A matrix is not a member of the dense subalgebra.

    ``index`` names the offending block (for Gram data) when known.
    """

    def __init__(self, msg, residual, index=None):
        super().__init__(msg)
        self.residual = residual
        self.index = index


class ConvergenceError(AbsorbError):
    """An iterative procedure failed to converge.

    The last two iterates are kept on the exception so callers can inspect
    how far apart they were.
    """

    def __init__(self, msg, previous, current):
        super().__init__(msg)
        self.previous = previous
        self.current = current


class NumericError(AbsorbError):
    """A numerical routine broke down (singular system, non-finite values)."""

    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


class InvalidStateError(DomainError):
    """A density matrix is not a state (trace one, positive)."""


class GridTooCoarseError(DomainError):
    pass


class InvalidProfileError(DomainError):
    pass


class DomainViolationError(DomainError):
    """A grid function does not vanish near the boundary."""


class ConfigError(AbsorbError):
    """Invalid configuration or instance file.

    ``line`` and ``column`` are 1-based and refer to the offending input
    position when the error stems from parsing.
    """

    def __init__(self, msg, line=None, column=None, invariant=None):
        if line is not None:
            msg = f"line {line}, column {column or 1}: {msg}"
        super().__init__(msg)
        self.line = line
        self.column = column
        self.invariant = invariant
