"""Exception types shared across the package.

The CLI maps these onto process exit codes: config problems exit 2,
I/O and file-format problems exit 3, numeric failures exit 4.
"""


class SincPulseError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SincPulseError, ValueError):
    """A runtime input (signal, clip, series) violates a precondition."""


class ShapeError(InvalidInputError):
    """Operands have incompatible shapes."""


class InvalidConfigError(SincPulseError, ValueError):
    """A configuration value violates an invariant."""


class NumericError(SincPulseError, ArithmeticError):
    """A computation produced NaN/Inf or otherwise failed numerically."""

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message if op is None else f"{op}: {message}")
        self.op = op


class FileFormatError(SincPulseError, IOError):
    """A serialized artifact is malformed."""


class ChecksumError(FileFormatError):
    """Stored checksum does not match the file contents."""


class VersionError(FileFormatError):
    """Stored format version or config digest is incompatible."""
