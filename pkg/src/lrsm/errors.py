"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage problems -> 2, bad data -> 3,
numerical failures -> 4.
"""


class LRSMError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgument(LRSMError, ValueError):
    exit_code = 2


class DataError(LRSMError):
    """Input files missing, malformed, or inconsistent with each other."""

    exit_code = 3


class NumericalError(LRSMError, ArithmeticError):
    exit_code = 4


class DegenerateCovariance(NumericalError):
    """Cholesky factorization failed.

    ``minor`` is the 1-based order of the leading minor that is not
    positive definite (LAPACK ``potrf`` convention).
    """

    def __init__(self, minor, backend=None):
        self.minor = minor
        self.backend = backend
        tag = f"[{backend}] " if backend else ""
        super().__init__(
            f"{tag}covariance is not positive definite: "
            f"leading minor of order {minor} failed"
        )


class QuadratureError(NumericalError):
    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual estimate {residual:.3e})"
        super().__init__(message)


class EstimationError(NumericalError):
    """An optimizer did not converge; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        self.best = best
        super().__init__(message)
