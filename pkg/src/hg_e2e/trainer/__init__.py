"""Two-stage training: machine pretraining, human-guided finetuning, ablations."""
from .augment import AugmentConfig, augment_batch
from .optim import AdamW, ParamGroup, clip_by_global_norm, lr_factor
from .train import (
    GUIDANCE,
    FrameArrays,
    TrainConfig,
    TrainingError,
    TrainResult,
    encode_all,
    evaluate_losses,
    finetune,
    guidance_weights,
    load_model,
    lr_schedule,
    pretrain,
    save_model,
)

__all__ = [
    "AugmentConfig", "augment_batch", "AdamW", "ParamGroup", "clip_by_global_norm", "lr_factor",
    "GUIDANCE", "FrameArrays", "TrainConfig", "TrainingError", "TrainResult", "encode_all",
    "evaluate_losses", "finetune", "guidance_weights", "load_model", "lr_schedule", "pretrain", "save_model",
]
