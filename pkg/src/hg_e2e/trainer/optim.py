"""AdamW with per-group learning rates, global-norm clipping and the warmup-cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numeric import ParameterSet


@dataclass
class ParamGroup:
    name: str
    params: ParameterSet
    base_lr: float


def lr_factor(step: int, total_steps: int, warmup_steps: int) -> float:
    """Linear warmup from 0 over ``warmup_steps``, then cosine decay reaching 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= warmup_steps <= total_steps:
        raise ValueError(f"warmup_steps must lie in [0, {total_steps}], got {warmup_steps}")
    if step < warmup_steps:
        return step / warmup_steps
    span = total_steps - warmup_steps
    if span == 0:
        return 0.0
    progress = min((step - warmup_steps) / span, 1.0)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class AdamW:
    """Decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""

    def __init__(self, groups: list[ParamGroup], betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.07):
        names = [k for g in groups for k in g.params]
        if len(names) != len(set(names)):
            raise ValueError("a parameter appears in more than one group")
        self.groups = groups
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for g in groups for k, p in g.params.items()}
        self.v = {k: np.zeros_like(p.data) for g in groups for k, p in g.params.items()}

    @property
    def names(self) -> list[str]:
        return [k for g in self.groups for k in g.params]

    def step(self, grads: dict[str, np.ndarray], factor: float, skip=()) -> None:
        """Update in place; ``factor`` scales every group's base learning rate.

        Parameters in ``skip`` (those the loss does not reach) are left exactly
        as they are, weight decay included.
        """
        skip = set(skip)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for group in self.groups:
            lr = group.base_lr * factor
            for name, p in group.params.items():
                if name in skip:
                    continue
                g = grads[name]
                m = self.m[name]
                v = self.v[name]
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                if lr == 0.0:
                    continue
                update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.wd * p.data
                p.data -= lr * update
