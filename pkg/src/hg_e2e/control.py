"""PID decomposition of predicted waypoints into steer / throttle / brake.

Steer is positive to the right (matching the ego frame's positive ``x``), so
waypoints to the left give negative steer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ControlCommand:
    steer: float  # [-1, 1]
    throttle: float  # [0, 1]
    brake: float  # 0 or 1


@dataclass(frozen=True)
class PIDGains:
    p: float
    i: float
    d: float


@dataclass(frozen=True)
class ControllerConfig:
    lateral: PIDGains = field(default_factory=lambda: PIDGains(1.0, 0.1, 0.1))
    longitudinal: PIDGains = field(default_factory=lambda: PIDGains(0.5, 0.05, 0.0))
    frame_rate: float = 2.0
    stop_threshold: float = 0.4  # m/s
    overspeed_ratio: float = 1.1
    integrator_limit: float = 10.0


class PID:
    def __init__(self, gains: PIDGains, limit: float):
        self.gains = gains
        self.limit = limit
        self.integral = 0.0
        self.prev: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.prev = None

    def __call__(self, error: float, dt: float) -> float:
        self.integral = float(np.clip(self.integral + error * dt, -self.limit, self.limit))
        deriv = 0.0 if self.prev is None else (error - self.prev) / dt
        self.prev = error
        g = self.gains
        return g.p * error + g.i * self.integral + g.d * deriv


def desired_speed(waypoints: np.ndarray, frame_rate: float) -> float:
    """Mean spacing of consecutive waypoints (starting from the ego) times the frame rate."""
    pts = np.vstack([np.zeros((1, 2)), np.asarray(waypoints, dtype=float).reshape(-1, 2)])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).mean() * frame_rate)


def heading_error(waypoints: np.ndarray) -> float:
    """Bearing (rad, positive right) of the mean of the first two waypoints.

    Odd in x by construction; an aim point on the heading axis (ahead or
    behind) gives 0 so that mirrored inputs negate the result exactly.
    """
    w = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    x, y = w[:2].mean(0)
    if x == 0.0:
        return 0.0
    return math.copysign(math.atan2(abs(x), y), x)


class PIDController:
    """One instance per rollout; the integrators carry state between frames."""

    def __init__(self, cfg: ControllerConfig = ControllerConfig()):
        self.cfg = cfg
        self.lat = PID(cfg.lateral, cfg.integrator_limit)
        self.lon = PID(cfg.longitudinal, cfg.integrator_limit)

    def reset(self) -> None:
        self.lat.reset()
        self.lon.reset()

    def __call__(self, waypoints, speed: float) -> ControlCommand:
        w = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if len(w) == 0:
            raise ValueError("at least one waypoint is required")
        if not np.all(np.isfinite(w)) or not math.isfinite(speed):
            return ControlCommand(0.0, 0.0, 1.0)
        dt = 1.0 / self.cfg.frame_rate
        steer = float(np.clip(self.lat(heading_error(w), dt), -1.0, 1.0))
        target = desired_speed(w, self.cfg.frame_rate)
        brake = target < self.cfg.stop_threshold or speed > self.cfg.overspeed_ratio * target
        throttle = float(np.clip(self.lon(target - speed, dt), 0.0, 1.0))
        if brake:
            throttle = 0.0
        return ControlCommand(steer, throttle, float(brake))
