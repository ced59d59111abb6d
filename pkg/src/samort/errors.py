class SamortError(Exception):
    """Base class for all package errors."""


class DataError(SamortError, ValueError):
    """Input data is malformed, incomplete or inconsistent."""


class NumericalError(SamortError, ArithmeticError):
    """A numerical procedure failed."""


class SingularSystemError(NumericalError):
    def __init__(self, message="singular penalized system"):
        super().__init__(message)


class ConvergenceError(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
