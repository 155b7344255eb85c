from typing import Optional


class DmscError(Exception):
    """Base class for every error raised by the package"""


class ConfigError(DmscError, ValueError):
    """Invalid configuration value or incompatible combination of values"""


class DimensionError(DmscError, ValueError):
    """Tensor shapes that cannot be combined"""


class SequenceLengthError(DimensionError):
    """Sequence too short for the receptive field of a convolution"""


class NumericError(DmscError, ArithmeticError):
    """NaN or Inf appeared where finite values are required"""


class GraphError(DmscError, RuntimeError):
    """Misuse of the autodiff graph (detached loss, repeated backward)"""


class FormatError(DmscError, ValueError):
    """Malformed binary file; `offset` is the byte position of the problem"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class SamplingError(DmscError, ValueError):
    """Batch sampling impossible for the given dataset"""


class MetricError(DmscError, ValueError):
    """Score table unsuitable for the requested metric"""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite"""

    def __init__(self, message: str, last_checkpoint: Optional[str] = None):
        self.last_checkpoint = last_checkpoint
        super().__init__(message)
