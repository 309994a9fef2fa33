"""Seeded training presets used by the tests, the CLI and the demos."""
from __future__ import annotations

from ..config import TOY, ModelConfig
from ..model import DrivingModel
from ..simdata.dataset import DataConfig, generate_dataset
from .train import FrameArrays, TrainConfig

# 8 frames, one full batch per step, 200 steps.  The rate is set explicitly
# (the B/512 rule would give 8e-6 here) and augmentation is off so the
# target set is fixed.
OVERFIT = TrainConfig(batch_size=8, epochs=200, warmup_epochs=20, lr_decision=5e-3, lr_encoder=2.5e-3,
                      lr_reference_batch=8, augment=False)


def overfit_setup(seed: int = 0, model_cfg: ModelConfig = TOY) -> tuple[DrivingModel, FrameArrays, TrainConfig]:
    ds = generate_dataset(seed, 1, "machine", DataConfig(), model_cfg, max_frames=8)
    return DrivingModel(model_cfg, seed), FrameArrays.from_frames(ds.frames), OVERFIT
