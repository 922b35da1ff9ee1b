"""
Exception hierarchy shared by every htr module
"""
from typing import Optional


class HTRError(Exception):
    """Base class for all errors raised by htr"""


class DimensionError(HTRError):
    """Shapes that cannot be combined, or an operation producing an empty extent"""


class ContractError(HTRError):
    """A documented precondition was violated by the caller"""


class TranscriptionLengthError(ContractError):
    """A transcription needs more decoder positions than the model has"""

    def __init__(self, source: str, line_number: Optional[int], positions: int, limit: int):
        self.source = source
        self.line_number = line_number
        self.positions = positions
        self.limit = limit
        where = f"{source} (manifest line {line_number})" if line_number is not None else source
        super().__init__(f"{where}: transcription needs {positions} decoder positions, max_target_len is {limit}")


class EmptyLossError(HTRError):
    """Masked loss where every position is ignored"""


class DegenerateStatisticsError(HTRError):
    """Batch statistics requested over fewer than two elements"""


class NonFiniteError(HTRError):
    """NaN or Inf detected while anomaly detection is enabled"""


class MaskError(HTRError):
    """An attention query row has every key blocked"""


class ImageFormatError(HTRError):
    """Raster file could not be decoded"""


class DegenerateHistogramError(HTRError):
    """Thresholding an image that has a single gray level"""


class ManifestParseError(HTRError):
    """Malformed manifest row"""

    def __init__(self, path: str, line_number: int, detail: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {detail}")


class SynthesisError(HTRError):
    """Synthetic line rendering failed"""


class UndefinedDenominatorError(HTRError):
    """Error rate requested against an empty reference"""


class DivergenceError(HTRError):
    """Training produced a non-finite loss"""

    def __init__(self, step: int, loss: Optional[float] = None):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at step {step}")


class CheckpointFormatError(HTRError):
    """Checkpoint archive is corrupted or truncated"""


class CheckpointMigrationError(HTRError):
    """Checkpoint archive was written by an unsupported format version"""


class UsageError(HTRError):
    """Command line could not be interpreted"""
