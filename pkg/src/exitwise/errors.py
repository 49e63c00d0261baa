"""Exception hierarchy shared across the package."""


class ExitwiseError(Exception):
    """Base class for all package errors."""


class ShapeError(ExitwiseError, ValueError):
    """Array extents are incompatible with the requested operation."""


class ParameterError(ExitwiseError, ValueError):
    """A scalar argument is outside its admissible range."""


class StateError(ExitwiseError, RuntimeError):
    """An object is missing state required by the call (e.g. no forward cache)."""


class FormatError(ExitwiseError, ValueError):
    """A file does not follow the expected binary layout."""


class CorruptRecordError(FormatError):
    """A record inside an otherwise well-formed file holds an invalid value."""


class ArchError(ExitwiseError, ValueError):
    """An architecture cannot be built with the requested geometry."""


class CheckpointError(ExitwiseError):
    """Base class for checkpoint load failures."""


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class FitError(ExitwiseError, ArithmeticError):
    """Curve fitting did not converge."""

    def __init__(self, message, iterations=None, grad_norm=None, params=None):
        super().__init__(message)
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.params = params


class PoleError(FitError):
    """Rational-curve data touches the pole 1 - b*A = 0."""
