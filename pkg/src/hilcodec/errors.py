"""Exception types shared across the package."""


class CodecError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(CodecError, ValueError):
    """Shapes, channel counts or hyper-parameters do not fit together."""


class DegenerateWeightError(CodecError, ValueError):
    """A weight-norm direction has zero norm."""


class FormatError(CodecError):
    """A container or stream does not have the expected layout."""


class CorruptStreamError(CodecError):
    """A bitstream is truncated or carries out-of-range indices."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
