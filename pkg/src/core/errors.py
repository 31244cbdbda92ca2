"""
Errors - Exception hierarchy shared by every subpackage

Each class also derives from the closest builtin exception so callers can
catch either the project-specific or the generic type.
"""


class VidLangError(Exception):
    """Base class for all errors raised by this package"""


class ShapeError(VidLangError, ValueError):
    """Operand shapes are incompatible for the requested operation"""


class NonFiniteError(VidLangError, FloatingPointError):
    """An operation produced NaN or Inf from finite inputs"""


class TapeError(VidLangError, RuntimeError):
    """The computation tape is in a state that does not allow the request"""


class ConfigError(VidLangError, ValueError):
    """A configuration value is missing, unknown or out of range"""


class CheckpointError(VidLangError, ValueError):
    """A checkpoint file is corrupt, truncated or incompatible"""


class DataFormatError(VidLangError, ValueError):
    """A record or record file violates the expected format"""


class TrainingDivergedError(VidLangError, FloatingPointError):
    """A loss term became non-finite during training"""

    def __init__(self, task: str, value: float):
        super().__init__(f"Loss term '{task}' became non-finite ({value})")
        self.task = task
        self.value = value


class EmptyQueueError(VidLangError, LookupError):
    """Negatives were requested from a memory queue that holds nothing"""


class LabelError(VidLangError, ValueError):
    """A class label or token id lies outside its valid range"""
