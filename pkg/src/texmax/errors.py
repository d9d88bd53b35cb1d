"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TexmaxError(Exception):
    exit_code = 1


class ConfigError(TexmaxError, ValueError):
    """Shapes, dimensions or parameters that do not fit together."""

    exit_code = 2


class DataError(TexmaxError):
    """Bad dataset contents: missing files, duplicate rows, empty classes."""

    exit_code = 3


class FormatError(DataError):
    """A binary file that cannot be decoded. ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(TexmaxError, ArithmeticError):
    """Non-finite values or divergence."""

    exit_code = 4
