"""Stage-1 pretraining, stage-2 guided finetuning and checkpoint handling."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..heads import LossWeights, total_loss
from ..model import Batch, DrivingModel, loss_components, model_loss
from ..numeric import NonFiniteError, Tensor, grad, make_rng, no_grad
from ..numeric.checkpoint import assign, load_checkpoint, save_checkpoint
from .augment import AugmentConfig, augment_batch
from .optim import AdamW, ParamGroup, clip_by_global_norm, lr_factor

CNN_PREFIXES = ("encoder.image_branch.", "encoder.lidar_branch.")
GUIDANCE = ("none", "eye", "intention", "both", "fake")
STAGES = ("pretrain", "finetune")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 35
    warmup_epochs: int = 5
    steps_per_epoch: int | None = None  # None: one pass over the data
    lr_decision: float = 5e-4  # scaled by batch_size / lr_reference_batch
    lr_encoder: float = 2e-4
    lr_finetune: float = 1e-4
    lr_reference_batch: int = 512
    weight_decay: float = 0.07
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    stage: str = "pretrain"
    guidance: str = "none"
    augment: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.guidance not in GUIDANCE:
            raise ValueError(f"guidance must be one of {GUIDANCE}, got {self.guidance!r}")
        if not 0 <= self.warmup_epochs <= self.epochs or self.epochs < 1:
            raise ValueError(f"need 0 <= warmup_epochs <= epochs and epochs >= 1, got {self.warmup_epochs}/{self.epochs}")
        if min(self.lr_decision, self.lr_encoder, self.lr_finetune) <= 0 or self.batch_size < 1:
            raise ValueError("learning rates and batch size must be positive")

    def scaled(self, base: float) -> float:
        return base * self.batch_size / self.lr_reference_batch

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def lr_schedule(step: int, cfg: TrainConfig, steps_per_epoch: int, base_lr: float | None = None) -> float:
    """Learning rate at optimizer step ``step`` (0-based) for a group with base lr ``base_lr``
    (default: the decision-stack lr of the config's stage, batch-scaled)."""
    if base_lr is None:
        base_lr = cfg.scaled(cfg.lr_finetune if cfg.stage == "finetune" else cfg.lr_decision)
    total = cfg.epochs * steps_per_epoch
    return base_lr * lr_factor(step, total, cfg.warmup_epochs * steps_per_epoch)


def guidance_weights(guidance: str, w: LossWeights = LossWeights()) -> LossWeights:
    """Map a guidance mode to loss weights: unused guidance terms are forced to 0."""
    if guidance not in GUIDANCE:
        raise ValueError(f"guidance must be one of {GUIDANCE}, got {guidance!r}")
    eye = w.eye if guidance in ("eye", "both", "fake") else 0.0
    hb = w.hb if guidance in ("intention", "both", "fake") else 0.0
    return w.replace(eye=eye, hb=hb)


# -- data --------------------------------------------------------------------------------

@dataclass
class FrameArrays:
    """All frames of a split stacked into arrays; ``take`` builds minibatches."""

    image: np.ndarray
    bev: np.ndarray
    history: np.ndarray
    goal: np.ndarray
    waypoints: np.ndarray
    density: np.ndarray
    traffic: np.ndarray
    gaze: np.ndarray | None
    eeg: np.ndarray | None
    brake: np.ndarray | None

    @classmethod
    def from_frames(cls, frames) -> "FrameArrays":
        if not frames:
            raise ValueError("no frames")

        def stack(name):
            vals = [getattr(f, name) for f in frames]
            if any(v is None for v in vals):
                return None
            return np.stack([np.asarray(v, dtype=float) for v in vals])

        return cls(**{f.name: stack(f.name) for f in dataclasses.fields(cls)})

    def __len__(self):
        return self.image.shape[0]

    def take(self, idx) -> Batch:
        def sel(a):
            return None if a is None else a[idx]
        return Batch(**{f.name: sel(getattr(self, f.name)) for f in dataclasses.fields(self)})

    def with_eeg(self, eeg) -> "FrameArrays":
        return replace(self, eeg=None if eeg is None else np.asarray(eeg, dtype=float))


def require_channels(arrays: FrameArrays, w: LossWeights) -> None:
    for channel, needed in (("gaze", w.eye > 0), ("eeg", w.hb > 0 and w.eeg > 0), ("brake", w.hb > 0 and w.brake > 0)):
        if needed and getattr(arrays, channel) is None:
            raise ValueError(f"guidance needs the '{channel}' channel, which this dataset does not have "
                             f"(use a human-split dataset)")


# -- checkpoints -------------------------------------------------------------------------

def save_model(model: DrivingModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, model.parameters().values_dict())
    return path


def load_model(model: DrivingModel, path) -> DrivingModel:
    assign(model.parameters(), load_checkpoint(path), strict=True)
    return model


# -- training loop -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DrivingModel
    log: list[dict]  # one row per epoch
    step_losses: list[float]
    checkpoints: list[Path] = field(default_factory=list)


def _epoch_order(n: int, cfg: TrainConfig, epoch: int, steps: int) -> list[np.ndarray]:
    rng = make_rng(cfg.seed, "shuffle", cfg.stage, epoch)
    order = rng.permutation(n)
    b = cfg.batch_size
    while len(order) < steps * b:
        order = np.concatenate([order, rng.permutation(n)])
    return [order[k * b:(k + 1) * b] for k in range(steps)]


def _run(model: DrivingModel, arrays: FrameArrays, cfg: TrainConfig, groups: list[ParamGroup],
         w: LossWeights, loss_fn, out_dir=None, tag: str = "") -> TrainResult:
    n = len(arrays)
    steps = cfg.steps_per_epoch or math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps
    warm = cfg.warmup_epochs * steps
    opt = AdamW(groups, cfg.betas, cfg.eps, cfg.weight_decay)
    params = {k: p for g in groups for k, p in g.params.items()}
    out_dir = Path(out_dir) if out_dir is not None else None
    log, step_losses, ckpts = [], [], []
    step = 0
    for epoch in range(cfg.epochs):
        sums: dict[str, float] = {}
        for b, idx in enumerate(_epoch_order(n, cfg, epoch, steps)):
            try:
                loss, comps = loss_fn(idx, epoch, b)
                value = float(loss.item())
            except NonFiniteError as err:
                raise TrainingError(f"non-finite values in epoch {epoch} batch {b} (frames {idx.tolist()}): {err}") from err
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} in epoch {epoch} batch {b} (frames {idx.tolist()})")
            factor = lr_factor(step, total, warm)
            if comps:
                report = grad(loss, params)
                grads, _ = clip_by_global_norm(report.grads, cfg.grad_clip)
                opt.step(grads, factor, skip=report.disconnected)
            step_losses.append(value)
            sums["total"] = sums.get("total", 0.0) + value
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1
        row = {"epoch": epoch, "lr": {g.name: g.base_lr * lr_factor(step - 1, total, warm) for g in groups}}
        row.update({k: v / steps for k, v in sums.items()})
        log.append(row)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            ckpts.append(save_model(model, out_dir / f"{tag}epoch_{epoch:03d}.ckpt"))
            with open(out_dir / f"{tag}train_log.jsonl", "a" if epoch else "w") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if out_dir is not None:
        ckpts.append(save_model(model, out_dir / f"{tag}final.ckpt"))
    return TrainResult(model, log, step_losses, ckpts)


def pretrain_groups(model: DrivingModel, cfg: TrainConfig) -> list[ParamGroup]:
    params = model.parameters()
    cnn = params.subset(CNN_PREFIXES)
    rest = type(params)((k, v) for k, v in params.items() if k not in cnn)
    return [ParamGroup("encoder_cnn", cnn, cfg.scaled(cfg.lr_encoder)),
            ParamGroup("decision", rest, cfg.scaled(cfg.lr_decision))]


def finetune_groups(model: DrivingModel, cfg: TrainConfig) -> list[ParamGroup]:
    return [ParamGroup("decision", model.decision_parameters(), cfg.scaled(cfg.lr_finetune))]


def pretrain(model: DrivingModel, arrays: FrameArrays, cfg: TrainConfig, out_dir=None,
             augment: AugmentConfig = AugmentConfig()) -> TrainResult:
    """Optimise every parameter on machine data with the guidance terms switched off."""
    cfg = replace(cfg, stage="pretrain")
    w = cfg.weights.replace(eye=0.0, hb=0.0)
    res = model.config.sensor.bev_resolution

    def loss_fn(idx, epoch, b):
        batch = arrays.take(idx)
        if cfg.augment:
            batch = augment_batch(batch, make_rng(cfg.seed, "augment", epoch, b), res, augment)
        loss, comps = model_loss(model, batch, w)
        return loss, comps

    return _run(model, arrays, cfg, pretrain_groups(model, cfg), w, loss_fn, out_dir, "pretrain_")


def encode_all(model: DrivingModel, arrays: FrameArrays, chunk: int = 32) -> np.ndarray:
    """Perception tokens of every frame with the current (frozen) encoder."""
    out = []
    with no_grad():
        for k in range(0, len(arrays), chunk):
            out.append(model.encode(arrays.image[k:k + chunk], arrays.bev[k:k + chunk]).data)
    return np.concatenate(out)


def finetune(model: DrivingModel, arrays: FrameArrays, cfg: TrainConfig, out_dir=None) -> TrainResult:
    """Train the decision transformer and heads with the encoder frozen.

    The encoder never enters the optimizer; its tokens are computed once up
    front, which is exact because nothing is augmented in this stage.
    """
    cfg = replace(cfg, stage="finetune")
    w = guidance_weights(cfg.guidance, cfg.weights)
    if cfg.guidance == "fake":
        if arrays.brake is None:
            raise ValueError("guidance 'fake' needs the 'brake' channel, which this dataset does not have")
        arrays = arrays.with_eeg(arrays.brake)
    require_channels(arrays, w)
    tokens = encode_all(model, arrays)

    def loss_fn(idx, epoch, b):
        batch = arrays.take(idx)
        pred = model.decide(Tensor(tokens[idx]), batch.history, batch.goal)
        comps = loss_components(pred, batch, w)
        return total_loss(comps, w), {k: float(v.item()) for k, v in comps.items()}

    return _run(model, arrays, cfg, finetune_groups(model, cfg), w, loss_fn, out_dir, "finetune_")


def evaluate_losses(model: DrivingModel, arrays: FrameArrays, w: LossWeights, chunk: int = 32) -> dict[str, float]:
    """Frame-weighted mean of each loss component over ``arrays`` (no gradients)."""
    sums: dict[str, float] = {}
    with no_grad():
        for k in range(0, len(arrays), chunk):
            idx = np.arange(k, min(k + chunk, len(arrays)))
            batch = arrays.take(idx)
            pred = model(batch.image, batch.bev, batch.history, batch.goal)
            for name, v in loss_components(pred, batch, w).items():
                sums[name] = sums.get(name, 0.0) + float(v.item()) * len(idx)
    return {k: v / len(arrays) for k, v in sums.items()}
