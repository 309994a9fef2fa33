"""Episode generation with the expert and the on-disk dataset format.

Dataset directory layout::

    manifest.json          sorted-key JSON: version, seed, split, config, config_hash,
                           frame_count, episodes [{file, route_id, frames, sha256}]
    episode_0000.bin ...   one binary file per episode

Episode file (all little-endian)::

    b"HGEP" | u32 version | u32 frame_count | u32 field_count
    per frame, per field in FIELDS order:
        u8 present; if present: u8 ndim | u32 dims[ndim] | f64 values (C order)
    sha256 digest (32 bytes) of everything above
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import ModelConfig, SensorConfig, config_hash
from ..control import ControllerConfig, PIDController
from ..numeric import derive_seed
from .eeg import synthesize_eeg_labels
from .expert import ExpertConfig, ExpertPolicy
from .render import (
    density_gt,
    goal_point,
    render_bev,
    render_range_view,
    scene_objects,
    synthesize_gaze,
    traffic_gt,
)
from .rules import RuleMonitor
from .scenario import WORLD_PRESETS, Scenario, make_scenario
from .world import Pose, World

FORMAT_VERSION = 1
MAGIC = b"HGEP"
FIELDS = ("image", "bev", "history", "goal", "waypoints", "density", "traffic",
          "gaze", "eeg", "brake", "timestamp", "speed")
OPTIONAL = ("gaze", "eeg", "brake")
SPLITS = ("machine", "human")
N_FUTURE = 3


class DatasetError(ValueError):
    pass


class EpisodeRejected(RuntimeError):
    pass


@dataclass
class FrameRecord:
    image: np.ndarray  # (3, H, W) range view
    bev: np.ndarray  # (C_L, G, G)
    history: np.ndarray  # (t, 2) ego-frame positions w_{t-2}, w_{t-1}, w_t
    goal: np.ndarray  # (2,) route target in the ego frame
    waypoints: np.ndarray  # (3, 2) expert future positions in the ego frame
    density: np.ndarray  # (R, R, 7)
    traffic: np.ndarray  # (3,)
    gaze: np.ndarray | None  # (H, W); None on the machine split
    eeg: float | None
    brake: float | None
    timestamp: float
    speed: float

    def equals(self, other: "FrameRecord") -> bool:
        for name in FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and np.asarray(a).tobytes() != np.asarray(b).tobytes():
                return False
            if a is not None and np.shape(a) != np.shape(b):
                return False
        return True


@dataclass
class Episode:
    route_id: str
    frames: list[FrameRecord]


@dataclass(frozen=True)
class DataConfig:
    world: str = "toy"
    frame_rate: float = 2.0
    history: int = 3
    density_side: int = 4
    gaze_sigma: float = 0.05  # fraction of image width
    eeg_accuracy: float = 0.65
    eeg_shift: int = 0
    max_seconds: float = 120.0
    blocked_seconds: float = 30.0

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class Dataset:
    split: str
    seed: int
    config: dict
    episodes: list[Episode] = field(default_factory=list)

    @property
    def frames(self) -> list[FrameRecord]:
        return [f for ep in self.episodes for f in ep.frames]

    def __len__(self):
        return sum(len(ep.frames) for ep in self.episodes)


def sense(world: World, sensor: SensorConfig, density_side: int, human: bool, gaze_sigma: float = 0.05):
    """Sensors and per-frame labels of the current state (no waypoint labels)."""
    objects = scene_objects(world)
    out = {
        "image": render_range_view(world, sensor, objects),
        "bev": render_bev(world, sensor),
        "goal": goal_point(world),
        "density": density_gt(world, density_side, sensor.bev_range),
        "traffic": traffic_gt(world),
    }
    out["gaze"] = synthesize_gaze(world, sensor, gaze_sigma, objects) if human else None
    return out


def ego_history(poses: list[tuple[float, float, float]], k: int, t: int, world_pose) -> np.ndarray:
    """Positions of frames k-t+1..k in the frame-k ego frame, zero-padded before the start."""
    hist = np.zeros((t, 2))
    for n in range(t):
        idx = k - (t - 1 - n)
        if idx >= 0:
            hist[n] = world_pose.to_ego(np.array(poses[idx][:2]))
    return hist


def generate_episode(seed: int, cfg: DataConfig, model_cfg: ModelConfig, split: str = "machine",
                     route_id: str = "r0", scenario: Scenario | None = None) -> Episode:
    """Drive the route with the expert and record every frame with full labels.

    The expert keeps driving ``N_FUTURE`` frames past the goal so that every
    recorded frame has three future positions.  Raises :class:`EpisodeRejected`
    if the expert is stuck or breaks a rule.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    human = split == "human"
    scenario = scenario or make_scenario(seed, WORLD_PRESETS[cfg.world], f"{split}:{route_id}")
    world = World(scenario, cfg.frame_rate)
    expert = ExpertPolicy(ExpertConfig())
    ctrl = PIDController(ControllerConfig(frame_rate=cfg.frame_rate))
    monitor = RuleMonitor(world)
    sensor = model_cfg.sensor

    records, poses, brakes = [], [], []
    blocked = 0.0
    extra = None
    while True:
        obs = sense(world, sensor, cfg.density_side, human, cfg.gaze_sigma)
        obs["timestamp"], obs["speed"] = world.t, world.speed
        poses.append((world.ego.x, world.ego.y, world.ego.heading))
        cmd = ctrl(expert(world), world.speed)
        brakes.append(cmd.brake)
        records.append(obs)
        world.step(cmd.steer, cmd.throttle, cmd.brake)
        for ev in monitor.update(world):
            raise EpisodeRejected(f"expert infraction {ev.kind} at t={ev.t:.1f}s ({ev.detail}) on route {route_id}")
        blocked = blocked + world.dt if world.speed < 0.1 else 0.0
        if blocked > cfg.blocked_seconds:
            raise EpisodeRejected(f"expert blocked for {blocked:.0f}s on route {route_id}")
        if world.t > cfg.max_seconds:
            raise EpisodeRejected(f"expert did not finish route {route_id} within {cfg.max_seconds:.0f}s")
        if extra is None and world.s >= scenario.route.length:
            extra = N_FUTURE
        if extra is not None:
            if extra == 0:
                poses.append((world.ego.x, world.ego.y, world.ego.heading))
                break
            extra -= 1

    n = len(records) - N_FUTURE
    eeg = synthesize_eeg_labels(brakes, cfg.eeg_accuracy, cfg.eeg_shift,
                                derive_seed(seed, "eeg", split, route_id)) if human else None
    frames = []
    for k in range(n):
        pose = Pose(*poses[k])
        fut = np.array([pose.to_ego(np.array(poses[k + j][:2])) for j in range(1, N_FUTURE + 1)])
        r = records[k]
        frames.append(FrameRecord(
            image=r["image"], bev=r["bev"], history=ego_history(poses, k, cfg.history, pose),
            goal=r["goal"], waypoints=fut, density=r["density"], traffic=r["traffic"],
            gaze=r["gaze"], eeg=float(eeg[k]) if human else None,
            brake=float(brakes[k]) if human else None,
            timestamp=float(r["timestamp"]), speed=float(r["speed"])))
    return Episode(route_id, frames)


def generate_dataset(seed: int, n_episodes: int, split: str = "machine", cfg: DataConfig = DataConfig(),
                     model_cfg: ModelConfig = ModelConfig(), max_frames: int | None = None,
                     attempts: int = 4) -> Dataset:
    """``n_episodes`` expert episodes on routes derived from (seed, split); rejected
    routes are replaced by the next route id (at most ``attempts`` per episode)."""
    episodes = []
    total = 0
    k = 0
    tries = 0
    while len(episodes) < n_episodes:
        route_id = f"r{k}"
        k += 1
        try:
            ep = generate_episode(derive_seed(seed, "episode", split, route_id), cfg, model_cfg, split, route_id)
        except EpisodeRejected:
            tries += 1
            if tries > attempts * n_episodes:
                raise
            continue
        if max_frames is not None:
            ep.frames = ep.frames[: max(max_frames - total, 0)]
        total += len(ep.frames)
        episodes.append(ep)
        if max_frames is not None and total >= max_frames:
            break
    meta = {"data": cfg.to_dict(), "model": model_cfg.to_dict()}
    return Dataset(split, seed, meta, episodes)


# -- binary IO ---------------------------------------------------------------------------

def _write_array(buf: io.BytesIO, value) -> None:
    if value is None:
        buf.write(struct.pack("<B", 0))
        return
    arr = np.asarray(value, dtype="<f8")  # ascontiguousarray would promote scalars to 1-d
    buf.write(struct.pack("<BB", 1, arr.ndim))
    if arr.ndim:
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes(order="C"))


def encode_episode(ep: Episode) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", FORMAT_VERSION, len(ep.frames), len(FIELDS)))
    for fr in ep.frames:
        for name in FIELDS:
            _write_array(buf, getattr(fr, name))
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data, self.pos, self.name = data, 0, name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetError(f"{self.name}: truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_episode(data: bytes, name: str = "episode", route_id: str = "") -> Episode:
    if len(data) < 32 + 16:
        raise DatasetError(f"{name}: truncated file ({len(data)} bytes)")
    body, digest = data[:-32], data[-32:]
    if data[:4] != MAGIC:
        raise DatasetError(f"{name}: bad magic {data[:4]!r}")
    if hashlib.sha256(body).digest() != digest:
        raise DatasetError(f"{name}: checksum mismatch (file corrupted or truncated)")
    r = _Reader(body, name)
    r.take(4)
    version, n_frames, n_fields = r.unpack("<III")
    if version != FORMAT_VERSION:
        raise DatasetError(f"{name}: format version {version}, reader supports {FORMAT_VERSION}")
    if n_fields != len(FIELDS):
        raise DatasetError(f"{name}: {n_fields} fields per frame, expected {len(FIELDS)}")
    frames = []
    for _ in range(n_frames):
        vals = {}
        for fname in FIELDS:
            (present,) = r.unpack("<B")
            if not present:
                vals[fname] = None
                continue
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
            vals[fname] = float(arr) if ndim == 0 else arr
        frames.append(FrameRecord(**vals))
    if r.pos != len(body):
        raise DatasetError(f"{name}: {len(body) - r.pos} trailing bytes")
    return Episode(route_id, frames)


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, ep in enumerate(ds.episodes):
        blob = encode_episode(ep)
        fname = f"episode_{k:04d}.bin"
        tmp = path / (fname + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, path / fname)
        entries.append({"file": fname, "route_id": ep.route_id, "frames": len(ep.frames),
                        "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = {"version": FORMAT_VERSION, "seed": ds.seed, "split": ds.split, "config": ds.config,
                "config_hash": config_hash(ds.config), "frame_count": len(ds), "episodes": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / "manifest.json"
    if not mf.exists():
        raise DatasetError(f"{path}: no manifest.json (not a dataset directory?)")
    manifest = json.loads(mf.read_text())
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: dataset version {manifest.get('version')}, reader supports {FORMAT_VERSION}")
    return manifest


def read_dataset(path) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path)
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise DatasetError(f"{path}: manifest config hash mismatch")
    episodes = []
    for e in manifest["episodes"]:
        fpath = path / e["file"]
        if not fpath.exists():
            raise DatasetError(f"{fpath}: missing episode file")
        blob = fpath.read_bytes()
        if hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise DatasetError(f"{fpath}: checksum mismatch against manifest")
        ep = decode_episode(blob, str(fpath), e["route_id"])
        if len(ep.frames) != e["frames"]:
            raise DatasetError(f"{fpath}: {len(ep.frames)} frames, manifest says {e['frames']}")
        episodes.append(ep)
    ds = Dataset(manifest["split"], manifest["seed"], manifest["config"], episodes)
    if len(ds) != manifest["frame_count"]:
        raise DatasetError(f"{path}: frame count {len(ds)} != manifest {manifest['frame_count']}")
    return ds
