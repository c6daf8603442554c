"""Exception hierarchy shared by every package in the project."""

from pathlib import Path
from typing import Optional


class CueCanError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(CueCanError, ValueError):
    """Tensor dimensions do not satisfy an operation's preconditions."""


class NumericError(CueCanError, ArithmeticError):
    """A forward or backward pass produced NaN or Inf."""


class AutodiffError(CueCanError, RuntimeError):
    """The autodiff graph was used incorrectly (e.g. backward twice)."""


class ConfigError(CueCanError, ValueError):
    """Invalid configuration string, parameter range or hyperparameter."""


class CheckpointMismatchError(CueCanError):
    """A checkpoint does not fit the architecture it is loaded into."""


class DatasetError(CueCanError, ValueError):
    """A dataset split is empty or lacks the labels a stage needs."""


class InvariantError(CueCanError, AssertionError):
    """A runtime invariant check failed."""


class DataFormatError(CueCanError):
    """A scene, mask or tensor file is malformed.

    Attributes:
        path: File that failed to parse
        offset: Byte offset of the first bad byte
    """

    def __init__(self, message: str, path: Optional[Path] = None, offset: int = 0):
        self.path = path
        self.offset = offset
        location = f"{path}" if path is not None else "<bytes>"
        super().__init__(f"{location} at byte offset {offset}: {message}")
