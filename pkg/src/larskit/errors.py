"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class InvalidArgument(ValueError):
    """An argument is outside its documented domain."""


class InvalidBatch(ValueError):
    """A batch is unusable for the requested operation (e.g. B < 2 for batch norm)."""


class UsageError(RuntimeError):
    """An API was called out of order (e.g. backward before forward)."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite or exploding quantity."""

    def __init__(self, message, group=None, step=None):
        super().__init__(message)
        self.group = group
        self.step = step


class OracleError(ArithmeticError):
    """The finite-difference oracle saw a non-finite loss."""


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


class FormatError(ValueError):
    """A data or checkpoint file is malformed."""


class SinkError(OSError):
    """Writing a metrics stream failed."""
