"""Exception types raised by the library."""


class SSGPError(Exception):
    """Base class for all library errors."""


class UnsupportedKernelError(SSGPError, ValueError):
    pass


class UnsupportedLikelihoodError(SSGPError, ValueError):
    pass


class UnsupportedInferenceError(SSGPError, ValueError):
    """The requested inference scheme cannot be used with this likelihood."""


class DomainError(SSGPError, ValueError):
    """Targets outside the support of the likelihood."""


class NoStationarySolutionError(SSGPError, ValueError):
    """The feedback matrix is not Hurwitz, so no stationary covariance exists."""


class FactorizationError(SSGPError, ArithmeticError):
    """Block factorization failed even after ridge regularization."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class NumericalFailure(SSGPError, ArithmeticError):
    """A recursion produced an invalid intermediate (e.g. non-positive innovation)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConvergenceError(SSGPError, RuntimeError):
    """An iterative scheme did not converge; ``trace`` holds the objective history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
