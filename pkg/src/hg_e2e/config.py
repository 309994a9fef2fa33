"""Model and sensor configuration with the toy / desk / paper-dims presets."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class SensorConfig:
    image_height: int = 32
    image_width: int = 64
    image_channels: int = 3
    fov_deg: float = 120.0
    camera_height: float = 1.5
    bev_channels: int = 8
    bev_extent: int = 16
    bev_resolution: float = 2.0  # metres per raster cell

    @property
    def bev_range(self) -> float:
        return self.bev_extent * self.bev_resolution


@dataclass(frozen=True)
class ModelConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    image_stage_channels: tuple[int, ...] = (8, 16)
    bev_stage_channels: tuple[int, ...] = (8, 16)
    image_strides: tuple[int, ...] = (4, 2)
    bev_strides: tuple[int, ...] = (2, 2)
    mbt_stages: tuple[int, ...] = (0, 1)
    mbt_dim: int = 32
    mbt_heads: int = 4
    depth_cells: int = 4
    max_depth: float = 30.5
    polar_encoding_dim: int = 16
    sampling: str = "nearest"
    patch: int = 2
    enc_dim: int = 32
    enc_layers: int = 2
    enc_heads: int = 4
    d_model: int = 32
    dec_layers: int = 2
    dec_heads: int = 4
    density_side: int = 4
    history: int = 3
    eye_downsample: int = 16
    waypoint_scale: float = 4.0

    def __post_init__(self):
        if len(self.image_stage_channels) != len(self.image_strides):
            raise ValueError("image_stage_channels and image_strides must have equal length")
        if len(self.bev_stage_channels) != len(self.bev_strides):
            raise ValueError("bev_stage_channels and bev_strides must have equal length")
        if len(self.image_strides) != len(self.bev_strides):
            raise ValueError("image and BEV branches need the same number of stages")
        for s in self.mbt_stages:
            if not 0 <= s < len(self.image_strides):
                raise ValueError(f"mbt stage {s} out of range")
        if self.history < 0:
            raise ValueError("history must be >= 0")

    # -- derived shapes -----------------------------------------------------
    def image_stage_shapes(self) -> list[tuple[int, int, int]]:
        h, w = self.sensor.image_height, self.sensor.image_width
        out = []
        for c, s in zip(self.image_stage_channels, self.image_strides):
            if h % s or w % s:
                raise ValueError(f"image extent {(h, w)} not divisible by stride {s}")
            h, w = h // s, w // s
            out.append((c, h, w))
        return out

    def bev_stage_shapes(self) -> list[tuple[int, int, int]]:
        g = self.sensor.bev_extent
        out = []
        for c, s in zip(self.bev_stage_channels, self.bev_strides):
            if g % s:
                raise ValueError(f"BEV extent {g} not divisible by stride {s}")
            g //= s
            out.append((c, g, g))
        return out

    def bev_stage_resolution(self, stage: int) -> float:
        res = self.sensor.bev_resolution
        for s in self.bev_strides[:stage + 1]:
            res *= s
        return res

    def eye_grid(self) -> tuple[int, int]:
        h, w, k = self.sensor.image_height, self.sensor.image_width, self.eye_downsample
        if h % k or w % k:
            raise ValueError(f"image {(h, w)} must be divisible by {k} for the eye query grid")
        return h // k, w // k

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        sensor = SensorConfig(**d.pop("sensor", {}))
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(sensor=sensor, **d)


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


TOY = ModelConfig()

DESK = ModelConfig(
    sensor=SensorConfig(image_height=48, image_width=96, bev_extent=24, bev_resolution=4.0 / 3.0),
    image_stage_channels=(12, 24),
    bev_stage_channels=(12, 24),
    mbt_dim=48,
    depth_cells=6,
    enc_dim=48,
    d_model=48,
    dec_layers=3,
)

FULL_DIMS = ModelConfig(
    sensor=SensorConfig(image_height=160, image_width=704, fov_deg=120.0, bev_channels=33,
                        bev_extent=256, bev_resolution=0.125),
    image_stage_channels=(72, 216),
    bev_stage_channels=(72, 216),
    image_strides=(4, 2),
    bev_strides=(4, 2),
    mbt_dim=512,
    mbt_heads=4,
    depth_cells=32,
    max_depth=30.5,
    patch=4,
    enc_dim=512,
    enc_layers=4,
    enc_heads=4,
    d_model=256,
    dec_layers=6,
    dec_heads=4,
    density_side=20,
)

PRESETS = {"toy": TOY, "desk": DESK, "paper-dims": FULL_DIMS}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
