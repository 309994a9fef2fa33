"""Prediction heads (waypoints, density map, traffic, eye attention, intention) and losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .config import ModelConfig
from .numeric import ConvTranspose2d, GRUCell, Linear, Module, ShapeError, Tensor, ops

N_FUTURE = 3
DENSITY_CHANNELS = 7  # presence, offset-x, offset-y, heading, velocity, box-width, box-length
TRAFFIC_FLAGS = ("light_is_red", "stop_sign_ahead", "at_junction")


@dataclass(frozen=True)
class LossWeights:
    pt: float = 1.0
    map: float = 1.0
    eye: float = 1.0
    tf: float = 1.0
    hb: float = 1.0
    light: float = 1.0
    stop: float = 1.0
    junction: float = 1.0
    eeg: float = 0.5
    brake: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def replace(self, **kw) -> "LossWeights":
        return LossWeights(**{**asdict(self), **kw})


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- waypoints ----------------------------------------------------------------------

class WaypointHead(Module):
    """Single-layer GRU unrolled for three steps.

    Step ``l`` takes hidden state ``e_l + h_{l-1}`` (decoder waypoint embedding
    plus the running state) and input ``[goal, previous waypoint]``; the
    output is a displacement added to the previous waypoint.  Coordinates are
    divided by ``scale`` inside the network.
    """

    def __init__(self, d: int, rng, scale: float = 4.0):
        self.gru = GRUCell(4, d, rng)
        self.out = Linear(d, 2, rng)
        self._scale = scale
        self._d = d

    def forward(self, embeddings: Tensor, history, goal) -> Tensor:
        history, goal = _t(history), _t(goal)
        b = goal.shape[0]
        if goal.shape != (b, 2) or history.ndim != 3 or history.shape[-1] != 2:
            raise ShapeError(f"goal must be (B, 2) and history (B, t, 2); got {goal.shape}, {history.shape}")
        t = embeddings.shape[1]
        inv = 1.0 / self._scale
        prev = history[:, -1] if history.shape[1] else Tensor(np.zeros((b, 2)))
        g = goal * inv
        h = Tensor(np.zeros((b, self._d)))
        preds = []
        for step in range(N_FUTURE):
            ctx = embeddings[:, step] + h if step < t else h
            h = self.gru(ops.concat([g, prev * inv], axis=1), ctx)
            prev = prev + self.out(h) * self._scale
            preds.append(prev)
        return ops.stack(preds, axis=1)


def waypoint_loss(pred, gt) -> Tensor:
    """Sum over waypoints of the L1 distance, averaged over the batch."""
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"waypoint prediction {pred.shape} vs ground truth {gt.shape}")
    per_sample = ops.abs(pred - gt).sum(axis=tuple(range(1, pred.ndim)))
    return per_sample.mean()


# -- density map -----------------------------------------------------------------------

class DensityHead(Module):
    def __init__(self, d: int, side: int, rng):
        self.proj = Linear(d, DENSITY_CHANNELS, rng)
        self._side = side

    def forward(self, embeddings: Tensor) -> Tensor:
        """(B, R*R, d) -> (B, R, R, 7) with a sigmoid on the presence channel."""
        b, n, _ = embeddings.shape
        if n != self._side ** 2:
            raise ShapeError(f"density head expects {self._side ** 2} embeddings, got {n}")
        raw = self.proj(embeddings)
        presence = ops.sigmoid(raw[..., :1])
        out = ops.concat([presence, raw[..., 1:]], axis=-1)
        return out.reshape(b, self._side, self._side, DENSITY_CHANNELS)


def density_loss(pred, gt) -> Tensor:
    """Balanced presence L1 (negatives and positives averaged separately, then halved)
    plus meta-channel L1 over positive cells.  Per-sample values are batch-averaged;
    terms with no positive cells are 0."""
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape or pred.shape[-1] != DENSITY_CHANNELS:
        raise ShapeError(f"density prediction {pred.shape} vs ground truth {gt.shape}")
    b = pred.shape[0]
    pos = (gt.data[..., 0] == 1.0).reshape(b, -1).astype(float)
    neg = (gt.data[..., 0] == 0.0).reshape(b, -1).astype(float)
    c1 = pos.sum(1)
    c0 = neg.sum(1)
    w1 = np.where(c1 > 0, 1.0 / np.maximum(c1, 1), 0.0)[:, None]
    w0 = np.where(c0 > 0, 1.0 / np.maximum(c0, 1), 0.0)[:, None]
    p_err = ops.abs(pred[..., 0] - gt[..., 0]).reshape(b, -1)
    l0 = (p_err * Tensor(neg * w0)).sum(axis=1)
    l1 = (p_err * Tensor(pos * w1)).sum(axis=1)
    m_err = ops.abs(pred[..., 1:] - gt[..., 1:]).sum(axis=-1).reshape(b, -1)
    meta = (m_err * Tensor(pos * w1)).sum(axis=1)
    return (0.5 * (l0 + l1) + meta).mean()


# -- traffic ------------------------------------------------------------------------------

class TrafficHead(Module):
    def __init__(self, d: int, rng):
        self.proj = Linear(d, len(TRAFFIC_FLAGS), rng)

    def forward(self, embedding: Tensor) -> Tensor:
        """(B, 1, d) -> (B, 3) probabilities [light_is_red, stop_sign_ahead, at_junction]."""
        return ops.sigmoid(self.proj(embedding[:, 0]))


def traffic_loss(pred, gt, w: LossWeights) -> Tensor:
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeError(f"traffic prediction {pred.shape} vs ground truth {gt.shape}")
    terms = []
    for k, lam in enumerate((w.light, w.stop, w.junction)):
        if lam:
            terms.append(ops.bce_loss(pred[:, k], gt[:, k]) * lam)
    return _sum_terms(terms)


# -- eye attention --------------------------------------------------------------------------

class EyeHead(Module):
    def __init__(self, d: int, grid_hw: tuple[int, int], rng, factor: int = 16):
        self.up = ConvTranspose2d(d, 1, factor, rng, stride=factor)
        self._grid = grid_hw

    def forward(self, embeddings: Tensor) -> Tensor:
        """(B, h*w, d) -> (B, H, W) gaze map in (0, 1)."""
        b, n, d = embeddings.shape
        gh, gw = self._grid
        if n != gh * gw:
            raise ShapeError(f"eye head expects {gh * gw} embeddings, got {n}")
        fmap = embeddings.transpose(0, 2, 1).reshape(b, d, gh, gw)
        out = ops.sigmoid(self.up(fmap))
        return out.reshape(b, out.shape[2], out.shape[3])


def eye_loss(pred, gt) -> Tensor:
    """Mean squared error over pixels (and batch)."""
    return ops.mse_loss(_t(pred), _t(gt))


# -- intention ----------------------------------------------------------------------------------

class IntentionHead(Module):
    def __init__(self, d: int, rng):
        self.proj = Linear(d, 2, rng)

    def forward(self, embedding: Tensor) -> Tensor:
        """(B, 1, d) -> (B, 2) probabilities [p_EEG, p_brake]."""
        return ops.sigmoid(self.proj(embedding[:, 0]))


def intention_loss(pred, eeg_labels, brake_labels, w: LossWeights) -> Tensor:
    pred = _t(pred)
    terms = []
    if w.eeg:
        terms.append(ops.bce_loss(pred[:, 0], _t(eeg_labels)) * w.eeg)
    if w.brake:
        terms.append(ops.bce_loss(pred[:, 1], _t(brake_labels)) * w.brake)
    return _sum_terms(terms)


# -- combination ------------------------------------------------------------------------------

def _sum_terms(terms) -> Tensor:
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def total_loss(components: dict[str, Tensor | float], w: LossWeights) -> Tensor:
    """lambda_pt L_pt + lambda_map L_map + lambda_eye L_eye + lambda_tf L_tf + lambda_hb L_hb.

    Terms whose weight is zero are left out of the graph entirely, so their
    heads receive no gradient (and no optimizer update).
    """
    terms = []
    for key in ("pt", "map", "eye", "tf", "hb"):
        lam = getattr(w, key)
        if lam and key in components:
            terms.append(_t(components[key]) * lam)
    return _sum_terms(terms)


class Heads(Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self.waypoint = WaypointHead(d, rng, cfg.waypoint_scale)
        self.density = DensityHead(d, cfg.density_side, rng)
        self.traffic = TrafficHead(d, rng)
        self.eye = EyeHead(d, cfg.eye_grid(), rng, cfg.eye_downsample)
        self.intention = IntentionHead(d, rng)
