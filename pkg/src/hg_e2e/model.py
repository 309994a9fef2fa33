"""Full driving model: perception encoder -> decision transformer -> five heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .decision import DecisionTransformer
from .heads import (
    Heads,
    LossWeights,
    density_loss,
    eye_loss,
    intention_loss,
    total_loss,
    traffic_loss,
    waypoint_loss,
)
from .numeric import Module, ParameterSet, Tensor, make_rng
from .perception import PerceptionEncoder

ENCODER_PREFIX = "encoder."


@dataclass
class PredictionBundle:
    waypoints: Tensor  # (B, 3, 2)
    density: Tensor  # (B, R, R, 7)
    traffic: Tensor  # (B, 3)
    eye: Tensor  # (B, H, W)
    intention: Tensor  # (B, 2) [p_EEG, p_brake]

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k).data for k in ("waypoints", "density", "traffic", "eye", "intention")}


@dataclass
class Batch:
    """Numpy arrays for one minibatch; gaze/intention may be None on the machine split."""

    image: np.ndarray  # (B, C, H, W)
    bev: np.ndarray  # (B, C_L, G, G)
    history: np.ndarray  # (B, t, 2)
    goal: np.ndarray  # (B, 2)
    waypoints: np.ndarray  # (B, 3, 2)
    density: np.ndarray  # (B, R, R, 7)
    traffic: np.ndarray  # (B, 3)
    gaze: np.ndarray | None = None  # (B, H, W)
    eeg: np.ndarray | None = None  # (B,)
    brake: np.ndarray | None = None  # (B,)

    def __len__(self):
        return self.image.shape[0]


class DrivingModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self._cfg = cfg
        rng = make_rng(seed, "model-init")
        self.encoder = PerceptionEncoder(cfg, rng)
        self.decision = DecisionTransformer(cfg, rng)
        self.heads = Heads(cfg, rng)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    def forward(self, image, bev, history, goal) -> PredictionBundle:
        return self.decide(self.encode(image, bev), history, goal)

    def encode(self, image, bev) -> Tensor:
        """Perception tokens z (B, N, d_enc)."""
        return self.encoder(image, bev).tokens

    def decide(self, z, history, goal) -> PredictionBundle:
        """Decision transformer and heads on precomputed perception tokens."""
        out = self.decision(z, history)
        h = self.heads
        return PredictionBundle(
            waypoints=h.waypoint(out.segment("waypoint"), history, goal),
            density=h.density(out.segment("density")),
            traffic=h.traffic(out.segment("traffic")),
            eye=h.eye(out.segment("eye")),
            intention=h.intention(out.segment("intention")),
        )

    def encoder_parameters(self) -> ParameterSet:
        return self.parameters().subset([ENCODER_PREFIX])

    def decision_parameters(self) -> ParameterSet:
        params = self.parameters()
        return ParameterSet((k, v) for k, v in params.items() if not k.startswith(ENCODER_PREFIX))


def loss_components(pred: PredictionBundle, batch: Batch, w: LossWeights) -> dict[str, Tensor]:
    """Compute only the components with non-zero weight; missing labels raise."""
    comps = {}
    if w.pt:
        comps["pt"] = waypoint_loss(pred.waypoints, batch.waypoints)
    if w.map:
        comps["map"] = density_loss(pred.density, batch.density)
    if w.tf:
        comps["tf"] = traffic_loss(pred.traffic, batch.traffic, w)
    if w.eye:
        if batch.gaze is None:
            raise ValueError("eye guidance requires the 'gaze' channel, which is absent from this data")
        comps["eye"] = eye_loss(pred.eye, batch.gaze)
    if w.hb and (w.eeg or w.brake):
        if w.eeg and batch.eeg is None:
            raise ValueError("intention guidance requires the 'eeg' channel, which is absent from this data")
        if w.brake and batch.brake is None:
            raise ValueError("intention guidance requires the 'brake' channel, which is absent from this data")
        comps["hb"] = intention_loss(pred.intention, batch.eeg, batch.brake, w)
    return comps


def model_loss(model: DrivingModel, batch: Batch, w: LossWeights) -> tuple[Tensor, dict[str, float]]:
    pred = model(batch.image, batch.bev, batch.history, batch.goal)
    comps = loss_components(pred, batch, w)
    loss = total_loss(comps, w)
    return loss, {k: float(v.item()) for k, v in comps.items()}
