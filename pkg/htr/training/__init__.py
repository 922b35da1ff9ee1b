from htr.training.optim import AdamState, adam_step, clip_grad_norm
from htr.training.trainer import (
    FitResult,
    Trainer,
    evaluate_model,
    fit,
    model_from_checkpoint,
    train_step,
    transcribe,
)

__all__ = [
    "AdamState",
    "FitResult",
    "Trainer",
    "adam_step",
    "clip_grad_norm",
    "evaluate_model",
    "fit",
    "model_from_checkpoint",
    "train_step",
    "transcribe",
]
