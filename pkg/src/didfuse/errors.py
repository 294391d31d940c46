"""Exception types shared across the package.

The CLI maps each family onto an exit code: ``DataError`` -> 2,
``NumericError`` -> 3.
"""


class DIDFuseError(Exception):
    """Base class for every error raised by this package."""


class DataError(DIDFuseError, ValueError):
    """Bad input data: unreadable files, mismatched sizes, corrupt checkpoints."""


class ShapeError(DataError):
    """Tensor shapes do not agree with what an operation requires."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class DecodeError(DataError):
    """An image file could not be decoded."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class CheckpointError(DataError):
    """A checkpoint file is corrupt or written by an unsupported format version."""


class NumericError(DIDFuseError, ArithmeticError):
    """Non-finite values or a solver that failed to converge."""
