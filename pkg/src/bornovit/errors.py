"""Exception hierarchy shared by all bornovit modules."""


class BornoViTError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(BornoViTError, ValueError):
    pass


class ConfigError(BornoViTError, ValueError):
    pass


class ContractError(BornoViTError, RuntimeError):
    """A caller broke an operation's precondition (e.g. backward on a non-scalar)."""


class DataError(BornoViTError, OSError):
    pass


class FormatError(BornoViTError, ValueError):
    """Malformed checkpoint file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingAborted(BornoViTError, RuntimeError):
    pass
