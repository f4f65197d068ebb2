"""Exception types raised by the library."""


class NatAllocError(Exception):
    """Base class for all library errors."""


class DomainError(NatAllocError, ValueError):
    """An argument lies outside the domain of the function."""


class UndefinedTailError(NatAllocError, ValueError):
    """A conditional share was requested above the largest possible loss."""


class UndefinedReturnError(NatAllocError, ValueError):
    """A return was requested for a line or layer with no equity."""


class CalibrationError(NatAllocError, ValueError):
    """No parameter in the search bracket reproduces the target return."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class GridError(NatAllocError, ValueError):
    """Discretization or convolution could not be carried out."""


class ParseError(NatAllocError, ValueError):
    """Malformed input file or specification."""


class InvariantViolation(NatAllocError, RuntimeError):
    """An internal accounting identity failed to hold."""
