"""Decision transformer: five-segment query bank cross-attending into perception tokens."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .numeric import DecoderLayer, LayerNorm, Linear, Module, ShapeError, Tensor, ops, parameter

SEGMENTS = ("waypoint", "density", "eye", "traffic", "intention")


@dataclass(frozen=True)
class QueryLayout:
    history: int
    density: int
    eye: int

    @property
    def sizes(self) -> dict[str, int]:
        return {"waypoint": self.history, "density": self.density, "eye": self.eye,
                "traffic": 1, "intention": 1}

    @property
    def total(self) -> int:
        return self.history + self.density + self.eye + 2

    def slice(self, segment: str) -> slice:
        start = 0
        for name, n in self.sizes.items():
            if name == segment:
                return slice(start, start + n)
            start += n
        raise KeyError(segment)

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "QueryLayout":
        eh, ew = cfg.eye_grid()
        return cls(cfg.history, cfg.density_side ** 2, eh * ew)


@dataclass
class QueryBank:
    tokens: Tensor  # (B, N, d), positional embedding already added
    layout: QueryLayout


@dataclass
class DecoderOutput:
    embeddings: Tensor  # (B, N, d), same order as the query bank
    layout: QueryLayout

    def segment(self, name: str) -> Tensor:
        return self.embeddings[:, self.layout.slice(name)]


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : d - d // 2])
    return out


class DecisionTransformer(Module):
    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self._layout = QueryLayout.from_config(cfg)
        self._scale = cfg.waypoint_scale
        self._pos = Tensor(sinusoidal_positions(self._layout.total, d))
        self.d = d
        self.history_embed = Linear(2, d, rng)
        self.history_slot = parameter(rng.normal(0, 0.02, size=(max(cfg.history, 1), d)))
        self.density_queries = parameter(rng.normal(0, 0.02, size=(self._layout.density, d)))
        self.eye_queries = parameter(rng.normal(0, 0.02, size=(self._layout.eye, d)))
        self.traffic_query = parameter(rng.normal(0, 0.02, size=(1, d)))
        self.intention_query = parameter(rng.normal(0, 0.02, size=(1, d)))
        self.layers = [DecoderLayer(d, cfg.dec_heads, rng) for _ in range(cfg.dec_layers)]
        self.norm = LayerNorm(d)

    @property
    def layout(self) -> QueryLayout:
        return self._layout

    def build_query_bank(self, history: np.ndarray | Tensor) -> QueryBank:
        """Assemble [waypoint | density | eye | traffic | intention] queries for a batch.

        ``history`` holds the recorded ego-frame positions (B, t, 2), oldest first.
        """
        history = history if isinstance(history, Tensor) else Tensor(history)
        b = history.shape[0]
        t = self._layout.history
        if history.shape[1:] != (t, 2):
            raise ShapeError(f"history must be (B, {t}, 2), got {history.shape}")
        parts = []
        if t:
            parts.append(self.history_embed(history * (1.0 / self._scale)) + self.history_slot)
        ones = Tensor(np.ones((b, 1, 1)))
        for q in (self.density_queries, self.eye_queries, self.traffic_query, self.intention_query):
            if q.shape[0]:
                parts.append(ones * q)
        tokens = ops.concat(parts, axis=1) + self._pos
        return QueryBank(tokens, self._layout)

    def decode(self, z: Tensor, queries: QueryBank) -> DecoderOutput:
        if z.shape[-1] != self.d:
            raise ShapeError(f"perception tokens have dim {z.shape[-1]}, decoder expects {self.d}")
        x = queries.tokens
        for layer in self.layers:
            x = layer(x, z)
        return DecoderOutput(self.norm(x), queries.layout)

    def forward(self, z: Tensor, history) -> DecoderOutput:
        return self.decode(z, self.build_query_bank(history))
