"""
Exception hierarchy shared by every multifuse package.
"""
from typing import Optional


class MultifuseError(Exception):
    """Base class for all multifuse errors."""


class ShapeError(MultifuseError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(MultifuseError):
    """A computation produced NaN or Inf."""


class DisconnectedError(MultifuseError):
    """The loss does not depend on anything that requires a gradient."""


class ConfigError(MultifuseError):
    """A configuration value is missing, unknown or out of range."""


class DegenerateBoxError(MultifuseError):
    """A box has no area after the requested transformation."""


class FormatError(MultifuseError):
    """A dataset or checkpoint file does not follow its format."""

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + where)


class MissingModalityError(MultifuseError):
    """One image of an RGB/thermal pair is absent."""


class MissingConfidenceError(MultifuseError):
    """A detection lacks the confidence value a report needs."""


class NoGroundTruthError(MultifuseError):
    """No evaluable ground-truth box exists for a metric."""


class ChecksumError(MultifuseError):
    """A checkpoint payload does not match its stored checksum."""


class IoError(MultifuseError, OSError):
    """A file or directory could not be read or written."""
