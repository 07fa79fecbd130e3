"""
Exception hierarchy for the upsampling engine

Every error carries a single-line message; the CLI prints it verbatim.
"""
from typing import Any, Optional


class FeatUpError(Exception):
    """Base class for all engine errors"""

    exit_code: int = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class DimensionError(FeatUpError):
    """Tensor has the wrong rank or an empty dimension"""

    exit_code = 3


class ShapeMismatchError(DimensionError):
    """Two tensors that must agree in shape do not"""


class ParameterError(FeatUpError):
    """An argument is outside its valid range"""

    exit_code = 3


class FormatError(FeatUpError):
    """A file does not follow its container format"""

    exit_code = 3


class UnsupportedDtypeError(FormatError):
    """Array file stores a dtype other than little-endian float32"""


class CheckpointFormatError(FormatError):
    """Checkpoint container is truncated or inconsistent"""


class MissingViewError(FeatUpError):
    """No ingested features exist for a sampled transform"""

    exit_code = 3

    def __init__(self, message: str, transform: Optional[Any] = None):
        super().__init__(message)
        self.transform = transform


class NonFiniteError(FeatUpError):
    """A loss, gradient or tensor became NaN or infinite"""

    exit_code = 4

    def __init__(self, message: str, name: Optional[str] = None):
        super().__init__(message)
        self.name = name


class UsageError(FeatUpError):
    """Command-line arguments are malformed"""

    exit_code = 2
