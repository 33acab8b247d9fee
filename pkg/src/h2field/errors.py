"""Exception hierarchy shared by all h2field modules."""


class H2FieldError(Exception):
    """Base class for every error raised by h2field."""


class ConfigError(H2FieldError, ValueError):
    """Invalid user-facing parameter or configuration value."""


class PointSetError(H2FieldError, ValueError):
    pass


class ParseError(PointSetError):
    """Malformed point file.  ``line`` is 1-based, or None for whole-file errors."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicatePointError(PointSetError):
    """Two or more points coincide; ``indices`` holds the offending pairs."""

    def __init__(self, message, indices=()):
        self.indices = tuple(indices)
        super().__init__(message)


class SizeError(H2FieldError, ValueError):
    """Requested object exceeds a configured size cap."""


class UnsupportedDimensionError(H2FieldError, ValueError):
    pass


class KernelError(H2FieldError, ValueError):
    pass


class DimensionError(H2FieldError, ValueError):
    """Vector or matrix shape does not match the operator."""


class NumericalError(H2FieldError, ArithmeticError):
    """Base class for failures of the numerical algorithms themselves."""


class NotPositiveDefiniteError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class CostGuardError(H2FieldError, ValueError):
    """A parameter would make the computation prohibitively expensive."""
