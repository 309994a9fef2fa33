"""Stage-1 data augmentation on numpy batches.

Image: random zoom about the image centre (factor in ``scale``) and per-channel
gain/offset jitter.  BEV: rotation about the ego by up to ``rotate_deg`` with
every ego-frame label (history, goal, waypoints, density map) rotated to match.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..model import Batch
from ..perception import rotate_bev, rotate_points
from ..simdata.render import density_cell


@dataclass(frozen=True)
class AugmentConfig:
    scale: tuple[float, float] = (0.9, 1.1)
    gain: float = 0.1  # colour jitter: channel * U(1 - gain, 1 + gain) + U(-bias, bias)
    bias: float = 0.05
    rotate_deg: float = 20.0


def zoom_image(img: np.ndarray, factor: float) -> np.ndarray:
    """Nearest-neighbour zoom of (C, H, W) about the centre; pixels sourced outside become 0."""
    _, h, w = img.shape
    src_r = np.floor((np.arange(h) + 0.5 - h / 2) / factor + h / 2).astype(int)
    src_c = np.floor((np.arange(w) + 0.5 - w / 2) / factor + w / 2).astype(int)
    ok_r = (src_r >= 0) & (src_r < h)
    ok_c = (src_c >= 0) & (src_c < w)
    out = np.zeros_like(img)
    rows, cols = np.flatnonzero(ok_r), np.flatnonzero(ok_c)
    out[:, rows[:, None], cols[None, :]] = img[:, src_r[ok_r][:, None], src_c[ok_c][None, :]]
    return out


def jitter(img: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    c = img.shape[0]
    gain = rng.uniform(1 - cfg.gain, 1 + cfg.gain, size=(c, 1, 1))
    bias = rng.uniform(-cfg.bias, cfg.bias, size=(c, 1, 1))
    return np.clip(img * gain + bias, 0.0, 1.0)


def rotate_density(density: np.ndarray, angle_deg: float, extent_m: float) -> np.ndarray:
    """Move every present vehicle to its rotated cell; offsets and relative heading follow."""
    side = density.shape[0]
    cs = extent_m / side
    out = np.zeros_like(density)
    best = np.full((side, side), np.inf)
    a = math.radians(angle_deg)
    for i, j in zip(*np.nonzero(density[..., 0] > 0.5)):
        meta = density[i, j]
        x = (j + 0.5 - side / 2.0 + meta[1]) * cs
        y = (side - i - 0.5 + meta[2]) * cs
        rx, ry = rotate_points(np.array([x, y]), angle_deg)
        cell = density_cell(rx, ry, side, extent_m)
        if cell is None:
            continue
        ni, nj = cell
        r = math.hypot(rx, ry)
        if r >= best[ni, nj]:
            continue
        best[ni, nj] = r
        cx = (nj + 0.5 - side / 2.0) * cs
        cy = (side - ni - 0.5) * cs
        # headings are clockwise-positive; a counter-clockwise scene rotation lowers them
        rel = (meta[3] - a + math.pi) % (2 * math.pi) - math.pi
        out[ni, nj] = [1.0, (rx - cx) / cs, (ry - cy) / cs, rel, meta[4], meta[5], meta[6]]
    return out


def augment_batch(batch: Batch, rng: np.random.Generator, bev_resolution: float,
                  cfg: AugmentConfig = AugmentConfig()) -> Batch:
    image = np.empty_like(batch.image)
    bev = np.empty_like(batch.bev)
    history = np.empty_like(batch.history)
    goal = np.empty_like(batch.goal)
    waypoints = np.empty_like(batch.waypoints)
    density = np.empty_like(batch.density)
    extent = batch.bev.shape[-1] * bev_resolution
    for b in range(len(batch)):
        image[b] = jitter(zoom_image(batch.image[b], rng.uniform(*cfg.scale)), rng, cfg)
        angle = float(rng.uniform(-cfg.rotate_deg, cfg.rotate_deg))
        bev[b] = rotate_bev(batch.bev[b], angle, bev_resolution)
        history[b] = rotate_points(batch.history[b], angle)
        goal[b] = rotate_points(batch.goal[b], angle)
        waypoints[b] = rotate_points(batch.waypoints[b], angle)
        density[b] = rotate_density(batch.density[b], angle, extent)
    return replace(batch, image=image, bev=bev, history=history, goal=goal, waypoints=waypoints, density=density)
