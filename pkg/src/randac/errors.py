"""Exception hierarchy shared by all modules."""


class RandacError(Exception):
    """Base class for package errors."""


class ConfigurationError(RandacError, ValueError):
    """Invalid dimensions, sizes, or cross-validated configuration values."""


class DomainError(RandacError, ValueError):
    """A point or lattice site lies outside the region it must belong to."""


class PreconditionError(RandacError, ValueError):
    """A documented precondition of an operation does not hold."""


class NonConvergenceError(RandacError, RuntimeError):
    """Iteration budget exhausted before reaching the stopping tolerance.

    The last iterate and its residual are kept so callers can inspect or
    restart from them.
    """

    def __init__(self, message, last_iterate=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class SchemeIntegrityError(RandacError, RuntimeError):
    """A structural property of a scheme (monotonicity, energy descent) was violated."""
