from htr.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from htr.models.pydantic_models import (
    CerReport,
    EditOps,
    ManifestEntry,
    ModelConfig,
    ResNetConfig,
    SampleScore,
    TrainConfig,
    TrainLogRecord,
    TransformerConfig,
)

__all__ = [
    "CerReport",
    "Checkpoint",
    "EditOps",
    "ManifestEntry",
    "ModelConfig",
    "ResNetConfig",
    "SampleScore",
    "TrainConfig",
    "TrainLogRecord",
    "TransformerConfig",
    "load_checkpoint",
    "save_checkpoint",
]
