"""Hybrid fusion encoder: conv branches, MBT cross-modal attention, token fusion.

Data flow per stage ``s``::

    img_s = image_branch stage s (img_{s-1})
    bev_s = lidar_branch stage s (bev_{s-1})
    bev_s = bev_s + MBT(img_s, bev_s)          (stages listed in mbt_stages)

after the last stage both maps are cut into ``patch x patch`` tokens, given
positional embeddings and passed through the shared encoder; the result is
projected to the decoder width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .geometry import CameraModel, PolarGrid, bev_cell_centers, build_polar_grid, fov_sampling_matrix
from .numeric import (
    Conv2d,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    ShapeError,
    Tensor,
    ops,
    parameter,
)


@dataclass
class PerceptionState:
    """Fused token sequence ``z`` (B, N*, d) plus the token split."""

    tokens: Tensor
    image_tokens: int
    bev_tokens: int

    @property
    def count(self) -> int:
        return self.image_tokens + self.bev_tokens


def token_count(image_hw: tuple[int, int], bev_hw: tuple[int, int], patch: int) -> int:
    """(H1/p)(W1/p) + (H2/p)(W2/p); rejects extents not divisible by ``patch``."""
    total = 0
    for h, w in (image_hw, bev_hw):
        if h % patch or w % patch:
            pad_h, pad_w = (-h) % patch, (-w) % patch
            raise ValueError(f"map {h}x{w} not divisible by patch {patch}; pad by ({pad_h}, {pad_w})")
        total += (h // patch) * (w // patch)
    return total


def config_token_count(cfg: ModelConfig) -> int:
    _, hi, wi = cfg.image_stage_shapes()[-1]
    _, gb, _ = cfg.bev_stage_shapes()[-1]
    return token_count((hi, wi), (gb, gb), cfg.patch)


def _rng_normal(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


class ConvStage(Module):
    """Strided patchify conv + residual 3x3 conv, both followed by GELU."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, rng):
        self.down = Conv2d(in_ch, out_ch, stride, rng, stride=stride)
        self.local = Conv2d(out_ch, out_ch, 3, rng, padding=1)

    def forward(self, x):
        x = ops.gelu(self.down(x))
        return x + ops.gelu(self.local(x))


class ConvBranch(Module):
    def __init__(self, in_ch: int, channels, strides, rng):
        stages = []
        prev = in_ch
        for c, s in zip(channels, strides):
            stages.append(ConvStage(prev, c, s, rng))
            prev = c
        self.stages = stages

    def stage(self, i: int, x):
        return self.stages[i](x)


def columns(image_stage: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, W, H*C); each column's content in (row, channel) row-major order."""
    b, c, h, w = image_stage.shape
    return image_stage.transpose(0, 3, 2, 1).reshape(b, w, h * c)


def patchify(fmap: Tensor, patch: int) -> Tensor:
    """(B, C, H, W) -> (B, (H/p)(W/p), C*p*p), patches in row-major order."""
    b, c, h, w = fmap.shape
    if h % patch or w % patch:
        raise ValueError(f"map {h}x{w} not divisible by patch {patch}; pad by ({(-h) % patch}, {(-w) % patch})")
    x = fmap.reshape(b, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // patch) * (w // patch), c * patch * patch)


class MBTBlock(Module):
    """Image columns -> polar BEV queries -> FOV sampling -> joint attention with BEV tokens."""

    def __init__(self, image_shape, bev_shape, cfg: ModelConfig, stage: int, rng):
        c_im, h_im, w_im = image_shape
        c_bev, g, _ = bev_shape
        d = cfg.mbt_dim
        camera = CameraModel(cfg.sensor.fov_deg, cfg.sensor.image_width, cfg.sensor.image_height)
        self._grid = build_polar_grid(camera, w_im, cfg.depth_cells, cfg.max_depth, cfg.polar_encoding_dim)
        self._resolution = cfg.bev_stage_resolution(stage)
        self._extent = g
        self._sample = Tensor(fov_sampling_matrix(self._grid, g, self._resolution, cfg.sampling))
        self._enc = Tensor(self._grid.encodings.reshape(self._grid.cell_count, -1))
        self.col_proj = Linear(h_im * c_im, d, rng)
        self.col_pos = parameter(_rng_normal(rng, (w_im, d)))
        self.col_layer = EncoderLayer(d, cfg.mbt_heads, rng)
        self.col_norm = LayerNorm(d)
        self.query_embed = Linear(cfg.polar_encoding_dim, d, rng)
        self.translate = MultiHeadAttention(d, cfg.mbt_heads, rng)
        self.bev_proj = Linear(c_bev, d, rng)
        self.fuse_pos = parameter(_rng_normal(rng, (2 * g * g, d)))
        self.fuse_layer = EncoderLayer(d, cfg.mbt_heads, rng)
        self.out_proj = Linear(d, c_bev, rng)

    @property
    def grid(self) -> PolarGrid:
        return self._grid

    def mediate(self, image_stage: Tensor) -> Tensor:
        """Mediate encodings h_i (B, NW, D) from a self-attention layer over image columns."""
        h = self.col_proj(columns(image_stage)) + self.col_pos
        return self.col_norm(self.col_layer(h))

    def polar_features(self, image_stage: Tensor) -> Tensor:
        """F_mid: (B, rays * depth, D); every polar query attends over all columns."""
        h = self.mediate(image_stage)
        b = h.shape[0]
        q = self.query_embed(self._enc)
        q = ops.add(ops.reshape(q, (1,) + q.shape), Tensor(np.zeros((b, 1, 1))))
        return self.translate(q, h)

    def forward(self, image_stage: Tensor, bev_stage: Tensor) -> Tensor:
        b, c_bev, g, _ = bev_stage.shape
        if g != self._extent:
            raise ShapeError(f"MBT block built for BEV extent {self._extent}, got {bev_stage.shape}")
        f_mid = self.polar_features(image_stage)
        f_mbt = ops.matmul(self._sample, f_mid)  # (B, G*G, D)
        f_li = self.bev_proj(bev_stage.reshape(b, c_bev, g * g).transpose(0, 2, 1))
        f_in = ops.concat([f_mbt, f_li], axis=1) + self.fuse_pos
        y = self.fuse_layer(f_in)
        n = g * g
        fused = y[:, :n] + y[:, n:]
        delta = self.out_proj(fused)  # (B, G*G, C)
        return bev_stage + delta.transpose(0, 2, 1).reshape(b, c_bev, g, g)


class FusionEncoder(Module):
    """Patch tokenisation of both maps + shared transformer encoder + projection to d."""

    def __init__(self, image_shape, bev_shape, cfg: ModelConfig, rng):
        c_im, h_im, w_im = image_shape
        c_bev, g, _ = bev_shape
        p = cfg.patch
        total = token_count((h_im, w_im), (g, g), p)
        self._n_bev = (g // p) * (g // p)
        self._n_img = total - self._n_bev
        self._patch = p
        self.img_embed = Linear(c_im * p * p, cfg.enc_dim, rng)
        self.bev_embed = Linear(c_bev * p * p, cfg.enc_dim, rng)
        self.pos = parameter(_rng_normal(rng, (self._n_img + self._n_bev, cfg.enc_dim)))
        self.layers = [EncoderLayer(cfg.enc_dim, cfg.enc_heads, rng) for _ in range(cfg.enc_layers)]
        self.norm = LayerNorm(cfg.enc_dim)
        self.to_decoder = Linear(cfg.enc_dim, cfg.d_model, rng)

    def tokens(self, image_map: Tensor, bev_map: Tensor) -> Tensor:
        ti = self.img_embed(patchify(image_map, self._patch))
        tb = self.bev_embed(patchify(bev_map, self._patch))
        return ops.concat([ti, tb], axis=1)

    def encode_tokens(self, tokens: Tensor, pos: Tensor) -> Tensor:
        x = tokens + pos
        for layer in self.layers:
            x = layer(x)
        return self.to_decoder(self.norm(x))

    def forward(self, image_map: Tensor, bev_map: Tensor) -> PerceptionState:
        z = self.encode_tokens(self.tokens(image_map, bev_map), self.pos)
        return PerceptionState(z, self._n_img, self._n_bev)


class PerceptionEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        s = cfg.sensor
        self._cfg = cfg
        self._img_shapes = cfg.image_stage_shapes()
        self._bev_shapes = cfg.bev_stage_shapes()
        self.image_branch = ConvBranch(s.image_channels, cfg.image_stage_channels, cfg.image_strides, rng)
        self.lidar_branch = ConvBranch(s.bev_channels, cfg.bev_stage_channels, cfg.bev_strides, rng)
        self.mbt = [MBTBlock(self._img_shapes[i], self._bev_shapes[i], cfg, i, rng) for i in cfg.mbt_stages]
        self.fusion = FusionEncoder(self._img_shapes[-1], self._bev_shapes[-1], cfg, rng)

    def check_inputs(self, image: Tensor, bev: Tensor) -> None:
        s = self._cfg.sensor
        want_i = (s.image_channels, s.image_height, s.image_width)
        want_b = (s.bev_channels, s.bev_extent, s.bev_extent)
        if image.ndim != 4 or image.shape[1:] != want_i:
            raise ShapeError(f"image batch must be (B, {want_i}), got {image.shape}")
        if bev.ndim != 4 or bev.shape[1:] != want_b:
            raise ShapeError(f"BEV batch must be (B, {want_b}), got {bev.shape}")

    def stages(self, image: Tensor, bev: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        """Per-stage image and (post-MBT) BEV feature maps."""
        self.check_inputs(image, bev)
        mbt = dict(zip(self._cfg.mbt_stages, self.mbt))
        img_stages, bev_stages = [], []
        x_i, x_b = image, bev
        for i in range(len(self._img_shapes)):
            x_i = self.image_branch.stage(i, x_i)
            x_b = self.lidar_branch.stage(i, x_b)
            if i in mbt:
                x_b = mbt[i](x_i, x_b)
            img_stages.append(x_i)
            bev_stages.append(x_b)
        return img_stages, bev_stages

    def forward(self, image, bev) -> PerceptionState:
        image, bev = _as_t(image), _as_t(bev)
        img_stages, bev_stages = self.stages(image, bev)
        return self.fusion(img_stages[-1], bev_stages[-1])


def _as_t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- augmentation -----------------------------------------------------------------

def rotate_points(points: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate ego-frame (x right, y forward) points about the ego by ``angle_deg``
    (positive = counter-clockwise seen from above, i.e. towards the left)."""
    a = np.radians(angle_deg)
    c, s = np.cos(a), np.sin(a)
    pts = np.asarray(points, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def rotate_bev(raster: np.ndarray, angle_deg: float, resolution: float) -> np.ndarray:
    """Nearest-neighbour rotation of a (C, G, G) ego raster about the ego point,
    consistent with :func:`rotate_points`; cells sourced from outside become 0."""
    c, g, _ = raster.shape
    x, y = bev_cell_centers(g, resolution)
    src = rotate_points(np.stack([x, y], axis=-1), -angle_deg)
    j = np.floor(src[..., 0] / resolution + g / 2.0).astype(int)
    i = np.floor(g - src[..., 1] / resolution).astype(int)
    ok = (i >= 0) & (i < g) & (j >= 0) & (j < g)
    out = np.zeros_like(raster)
    out[:, ok] = raster[:, i[ok], j[ok]]
    return out
