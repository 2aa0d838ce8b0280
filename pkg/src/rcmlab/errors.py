"""Exception hierarchy. The CLI maps each class onto an exit code."""


class RCMError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class ValidationError(RCMError, ValueError):
    """Inputs violate the preconditions of an operation."""

    exit_code = 2


class ConvergenceError(RCMError, ArithmeticError):
    """An iterative solver failed to reach its tolerance."""

    exit_code = 3


class TruncationError(RCMError):
    """The finite box is too small for the requested diffusive range."""

    exit_code = 4
