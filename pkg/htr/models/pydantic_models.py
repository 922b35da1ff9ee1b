from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LogLevel(str, Enum):
    """Accepted values of HTR_LOG"""
    ERROR = "error"
    INFO = "info"
    DEBUG = "debug"


class ResNetConfig(BaseModel):
    """ResNet-18-shaped feature extractor"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    stem_channels: int = Field(64, description="Channels of the 7x7 stem convolution before scaling")
    stage_channels: Tuple[int, ...] = Field((64, 128, 256, 512), description="Channels of the four stages")
    blocks_per_stage: Tuple[int, ...] = Field((2, 2, 2, 2), description="Basic blocks per stage")
    width_scale: float = Field(0.25, gt=0.0, le=1.0, description="Multiplier applied to every channel count")

    @model_validator(mode="after")
    def check_shape(self) -> "ResNetConfig":
        if len(self.stage_channels) != len(self.blocks_per_stage):
            raise ValueError("stage_channels and blocks_per_stage must have the same length")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("every stage needs at least one block")
        if any(a >= b for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError("stage channels must be strictly increasing")
        for channels in (self.stem_channels, *self.stage_channels):
            if channels * self.width_scale < 4:
                raise ValueError(f"width_scale {self.width_scale} shrinks {channels} channels below 4")
        return self

    def scaled(self, channels: int) -> int:
        return max(4, int(round(channels * self.width_scale)))

    @property
    def scaled_stem(self) -> int:
        return self.scaled(self.stem_channels)

    @property
    def scaled_stages(self) -> List[int]:
        return [self.scaled(c) for c in self.stage_channels]


class TransformerConfig(BaseModel):
    """Encoder-decoder transformer over image memory"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    d_model: int = Field(256, ge=2, description="Width of every sequence position")
    n_heads: int = Field(4, ge=1, description="Attention heads")
    enc_layers: int = Field(2, ge=0, description="Encoder layers over the image memory")
    dec_layers: int = Field(2, ge=1, description="Decoder layers")
    d_ff: int = Field(512, ge=1, description="Hidden width of the feedforward sublayer")
    dropout: float = Field(0.1, ge=0.0, lt=1.0, description="Dropout rate, train mode only")
    max_target_len: int = Field(128, ge=2, description="Longest token sequence, sos and eos included")

    @model_validator(mode="after")
    def check_heads(self) -> "TransformerConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.d_model % 2:
            raise ValueError(f"d_model must be even for sinusoidal positions, got {self.d_model}")
        return self


class ModelConfig(BaseModel):
    """
    Full architecture and preprocessing description stored in checkpoints
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    image_height: int = Field(64, ge=16, description="Canonical line height in pixels")
    max_width: int = Field(1024, ge=32, description="Widest normalized line in pixels")
    binarize: bool = Field(False, description="Apply Otsu binarization after normalization")
    proj_depth: int = Field(2, ge=1, le=3, description="Affine layers between ResNet features and d_model")
    seed: int = Field(0, description="Seed of the parameter initialization")
    resnet: ResNetConfig = Field(default_factory=ResNetConfig)
    transformer: TransformerConfig = Field(default_factory=TransformerConfig)

    @field_validator("image_height", "max_width")
    @classmethod
    def multiple_of_32(cls, value: int) -> int:
        if value % 32:
            raise ValueError(f"{value} is not a multiple of 32")
        return value


class TrainConfig(BaseModel):
    """Optimization settings"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    learning_rate: float = Field(3e-4, gt=0.0, description="Adam step size")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.98, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-9, gt=0.0)
    max_steps: int = Field(2000, ge=0)
    batch_size: int = Field(8, ge=1)
    grad_clip: float = Field(1.0, gt=0.0, description="Global gradient norm ceiling")
    seed: int = Field(0, description="Seed of batching, splitting and dropout")
    eval_every: int = Field(100, ge=1, description="Steps between validation and checkpoint")
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0, description="Held-out share; 0 validates on the training set")
    max_retries: int = Field(3, ge=0, description="Divergence retries with halved learning rate")
    prefetch: int = Field(2, ge=0, description="Batches prepared ahead by the producer thread")


class ManifestEntry(BaseModel):
    """One line image and its transcription"""
    image_path: str = Field(..., description="Path of the line image")
    transcription: str = Field(..., min_length=1, description="Normalized ground truth")
    line_number: Optional[int] = Field(None, ge=1, description="Row of the manifest the entry was read from")


class EditOps(BaseModel):
    """Edits turning the hypothesis into the reference"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    ins: int = Field(0, ge=0, description="Reference units missing from the hypothesis")
    sub: int = Field(0, ge=0, description="Mismatched units")
    dele: int = Field(0, ge=0, alias="del", description="Hypothesis units absent from the reference")

    @property
    def total(self) -> int:
        return self.ins + self.sub + self.dele


class SampleScore(BaseModel):
    reference: str
    hypothesis: str
    char_edits: EditOps
    n: int = Field(..., description="Characters in the reference")
    cer_percent: float = Field(..., ge=0.0)
    word_edits: Optional[EditOps] = None
    n_words: int = 0
    wer_percent: Optional[float] = None
    source: Optional[str] = None


class CerReport(BaseModel):
    """
    Per-sample scores and corpus aggregates.

    `corpus_cer`/`corpus_wer` are micro averages (summed edits over summed
    lengths); the `macro_` fields average the per-line rates.
    """
    samples: List[SampleScore] = Field(default_factory=list)
    corpus_cer: float = 0.0
    corpus_wer: float = 0.0
    macro_cer: float = 0.0
    macro_wer: float = 0.0

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "samples": [
                    {
                        "reference": "kitab",
                        "hypothesis": "kitaab",
                        "char_edits": {"ins": 0, "sub": 0, "del": 1},
                        "n": 5,
                        "cer_percent": 20.0,
                    }
                ],
                "corpus_cer": 20.0,
                "corpus_wer": 100.0,
            }
        }
    )

    def to_table(self) -> str:
        rows = [f"{'#':>4}  {'CER%':>7}  {'WER%':>7}  reference | hypothesis"]
        for index, sample in enumerate(self.samples):
            wer = "-" if sample.wer_percent is None else f"{sample.wer_percent:7.2f}"
            rows.append(
                f"{index:>4}  {sample.cer_percent:7.2f}  {wer:>7}  {sample.reference} | {sample.hypothesis}"
            )
        rows.append(f"corpus CER {self.corpus_cer:.2f}%  WER {self.corpus_wer:.2f}%")
        rows.append(f"macro  CER {self.macro_cer:.2f}%  WER {self.macro_wer:.2f}%")
        return "\n".join(rows)


class TrainLogRecord(BaseModel):
    step: int
    loss: float
    val_cer: Optional[float] = None
