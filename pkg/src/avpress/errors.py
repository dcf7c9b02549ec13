"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or ill-formed dimensions."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class NumericError(ArithmeticError):
    """A computation produced or received a non-finite value."""


class StateError(RuntimeError):
    """An operation was invoked out of order (e.g. backward before forward)."""


class TrainingError(RuntimeError):
    """Training diverged or was otherwise unable to proceed."""


class FormatError(ValueError):
    """A serialized payload is malformed.

    ``offset`` is the byte position at which the problem was detected,
    or None when no single offset applies.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
