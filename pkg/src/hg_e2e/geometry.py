"""Camera and BEV geometry for the image-column to polar-ray translation.

Conventions (used everywhere in the package):

* Ego frame: ``x`` lateral, positive to the right; ``y`` forward.  Units are metres.
* Bearing ``theta = atan2(x, y)``: 0 straight ahead, positive to the right, so
  bearings increase with image column index.
* BEV rasters are ``G x G`` with the ego at the bottom-centre facing up:
  row 0 is the farthest row, column ``G/2`` straddles ``x = 0``.  Cell
  ``(i, j)`` has centre ``x = (j + 0.5 - G/2) * res``, ``y = (G - i - 0.5) * res``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numeric import Tensor, ops


@dataclass(frozen=True)
class CameraModel:
    fov_deg: float
    image_width: int
    image_height: int

    def __post_init__(self):
        # 180 is accepted as the degenerate half-plane wedge (focal length -> 0)
        if not 0.0 < self.fov_deg <= 180.0:
            raise ValueError(f"fov_deg must lie in (0, 180], got {self.fov_deg}")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image extents must be positive")

    @property
    def focal(self) -> float:
        return (self.image_width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    def focal_at(self, width: int) -> float:
        """Focal length in pixels of a feature map ``width`` columns wide."""
        return (width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    def column_bearings(self, width: int | None = None) -> np.ndarray:
        """Bearing of each column centre for an image (or feature map) of ``width``."""
        width = width or self.image_width
        f = self.focal_at(width)
        u = np.arange(width) + 0.5 - width / 2.0
        return np.arctan(u / f)

    def project(self, x: float, y: float, z: float, cam_height: float) -> tuple[float, float]:
        """Continuous (column, row) of ego-frame point (x, y, z); row 0 is the top."""
        f = self.focal
        col = self.image_width / 2.0 + f * x / y
        row = self.image_height / 2.0 + f * (cam_height - z) / y
        return col, row


@dataclass(frozen=True)
class PolarGrid:
    camera: CameraModel
    ray_count: int
    depth_cells: int
    max_depth: float
    radii: np.ndarray = field(repr=False)
    angles: np.ndarray = field(repr=False)
    encodings: np.ndarray = field(repr=False)

    @property
    def cell_count(self) -> int:
        return self.ray_count * self.depth_cells

    @property
    def centers(self) -> np.ndarray:
        """(rays, depth, 2) array of (radius m, angle rad)."""
        r = np.broadcast_to(self.radii[None, :], (self.ray_count, self.depth_cells))
        a = np.broadcast_to(self.angles[:, None], (self.ray_count, self.depth_cells))
        return np.stack([r, a], axis=-1)

    @property
    def ray_edges(self) -> np.ndarray:
        f = self.camera.focal_at(self.ray_count)
        u = np.arange(self.ray_count + 1) - self.ray_count / 2.0
        return np.arctan(u / f)


def _sinusoid(values: np.ndarray, dim: int, scale: float) -> np.ndarray:
    freqs = np.exp(-np.log(100.0) * np.arange(dim // 2) / max(dim // 2, 1))
    arg = values[..., None] / scale * freqs * np.pi
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


def build_polar_grid(camera: CameraModel, rays: int, depth_cells: int, max_depth: float,
                     encoding_dim: int = 16) -> PolarGrid:
    """Polar query grid: one ray per feature column, ``depth_cells`` radial cells.

    Radii are cell centres ``(k + 0.5) * max_depth / depth_cells``.  Ray
    bearings follow the pinhole model at the feature map's width, so the ray
    fan's outer edges coincide with the FOV limits.
    """
    if rays < 1 or depth_cells < 1:
        raise ValueError(f"polar grid needs rays >= 1 and depth_cells >= 1, got {rays}, {depth_cells}")
    if max_depth <= 0:
        raise ValueError(f"max_depth must be positive, got {max_depth}")
    if encoding_dim < 4 or encoding_dim % 4:
        raise ValueError("encoding_dim must be a positive multiple of 4")
    radii = (np.arange(depth_cells) + 0.5) * max_depth / depth_cells
    angles = camera.column_bearings(rays)
    half = math.radians(camera.fov_deg) / 2
    r_enc = _sinusoid(np.broadcast_to(radii[None, :], (rays, depth_cells)), encoding_dim // 2, max_depth)
    a_enc = _sinusoid(np.broadcast_to(angles[:, None], (rays, depth_cells)), encoding_dim // 2, half)
    enc = np.concatenate([r_enc, a_enc], axis=-1)
    return PolarGrid(camera, rays, depth_cells, float(max_depth), radii, angles, enc)


def bev_cell_centers(extent: int, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    if extent <= 0 or resolution <= 0:
        raise ValueError(f"BEV extent and resolution must be positive, got {extent}, {resolution}")
    j = np.arange(extent)
    i = np.arange(extent)
    x = (j[None, :] + 0.5 - extent / 2.0) * resolution
    y = (extent - i[:, None] - 0.5) * resolution
    return np.broadcast_to(x, (extent, extent)).copy(), np.broadcast_to(y, (extent, extent)).copy()


def fov_mask(fov_deg: float, extent: int, resolution: float) -> np.ndarray:
    """Boolean (G, G) mask of BEV cells whose centre lies inside the FOV wedge."""
    x, y = bev_cell_centers(extent, resolution)
    theta = np.arctan2(x, y)
    return (y > 0) & (np.abs(theta) <= math.radians(fov_deg) / 2 + 1e-12)


def fov_sampling_matrix(grid: PolarGrid, extent: int, resolution: float, mode: str = "nearest") -> np.ndarray:
    """(G*G, rays*depth) matrix mapping flattened polar features to BEV cells.

    Rows of cells outside the FOV wedge are zero.  ``nearest`` picks the
    polar cell whose column interval and radial interval contain the BEV cell
    centre; ``bilinear`` interpolates between neighbouring column/depth
    centres.
    """
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    x, y = bev_cell_centers(extent, resolution)
    inside = fov_mask(grid.camera.fov_deg, extent, resolution)
    f = grid.camera.focal_at(grid.ray_count)
    theta = np.arctan2(x, y)
    col = f * np.tan(np.clip(theta, -np.pi / 2 + 1e-9, np.pi / 2 - 1e-9)) + grid.ray_count / 2.0
    dep = np.hypot(x, y) / (grid.max_depth / grid.depth_cells)
    mat = np.zeros((extent * extent, grid.cell_count))
    rows = np.flatnonzero(inside.reshape(-1))
    col, dep = col.reshape(-1)[rows], dep.reshape(-1)[rows]
    if mode == "nearest":
        u = np.clip(np.floor(col).astype(int), 0, grid.ray_count - 1)
        k = np.clip(np.floor(dep).astype(int), 0, grid.depth_cells - 1)
        mat[rows, u * grid.depth_cells + k] = 1.0
        return mat
    cu = np.clip(col - 0.5, 0, grid.ray_count - 1)
    ck = np.clip(dep - 0.5, 0, grid.depth_cells - 1)
    u0 = np.floor(cu).astype(int)
    k0 = np.floor(ck).astype(int)
    u1 = np.minimum(u0 + 1, grid.ray_count - 1)
    k1 = np.minimum(k0 + 1, grid.depth_cells - 1)
    fu, fk = cu - u0, ck - k0
    for uu, ww_u in ((u0, 1 - fu), (u1, fu)):
        for kk, ww_k in ((k0, 1 - fk), (k1, fk)):
            np.add.at(mat, (rows, uu * grid.depth_cells + kk), ww_u * ww_k)
    return mat


def fov_sample(f_mid, grid: PolarGrid, extent: int, resolution: float, mode: str = "nearest"):
    """Resample polar features ``(B, rays, depth, C)`` into a BEV map ``(B, G, G, C)``.

    Accepts a numpy array or a :class:`Tensor` (then differentiable).
    """
    mat = fov_sampling_matrix(grid, extent, resolution, mode)
    if f_mid.shape[1:3] != (grid.ray_count, grid.depth_cells):
        raise ValueError(f"polar features {f_mid.shape} do not match grid "
                         f"({grid.ray_count} rays x {grid.depth_cells} depth cells)")
    b, _, _, c = f_mid.shape
    if isinstance(f_mid, Tensor):
        flat = f_mid.reshape(b, grid.cell_count, c)
        return ops.matmul(Tensor(mat), flat).reshape(b, extent, extent, c)
    flat = np.asarray(f_mid).reshape(b, grid.cell_count, c)
    return np.matmul(mat, flat).reshape(b, extent, extent, c)
