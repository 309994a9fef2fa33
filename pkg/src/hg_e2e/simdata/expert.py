"""Rule-based privileged expert: route-following waypoints with a braking speed profile."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import World


@dataclass(frozen=True)
class ExpertConfig:
    cruise: float = 5.0  # m/s
    turn_speed: float = 3.5
    plan_decel: float = 2.0  # comfortable deceleration used for the speed profile
    stop_margin: float = 2.5  # ego centre stops this far before a stop line
    follow_gap: float = 4.0  # bumper-to-bumper distance kept to a lead vehicle
    stop_speed: float = 0.3  # counts as stopped at a stop sign
    hazard_range: float = 40.0


class ExpertPolicy:
    """Deterministic given the world; keeps per-episode stop-sign memory."""

    def __init__(self, cfg: ExpertConfig = ExpertConfig()):
        self.cfg = cfg
        self.served: set[int] = set()
        self.yellow_go: dict[int, bool] = {}
        self.braking = False

    def reset(self) -> None:
        self.served = set()
        self.yellow_go = {}
        self.braking = False

    def _profile(self, dist: float) -> float:
        """Largest speed from which a stop within ``dist`` is comfortable."""
        return math.sqrt(2 * self.cfg.plan_decel * max(dist, 0.0))

    def target_speed(self, world: World) -> float:
        cfg = self.cfg
        s, route = world.s, world.route
        v = cfg.cruise
        arc_half = 8.0 * math.pi / 4 + 2.0
        for sj in route.junctions:
            d = sj - arc_half - s
            if d < -2 * arc_half:
                continue
            v = min(v, math.sqrt(cfg.turn_speed ** 2 + 2 * cfg.plan_decel * max(d, 0.0)))

        for k, (light, state) in enumerate(zip(world.scenario.lights, world.light_states())):
            d = light.s_line - cfg.stop_margin - s
            if state != "yellow":
                self.yellow_go.pop(k, None)
            if d < -cfg.stop_margin or d > cfg.hazard_range:
                continue
            if state == "yellow" and k not in self.yellow_go:
                # decided once per yellow phase: go only if the line is reached well before red
                self.yellow_go[k] = not self._can_stop(world, d) and self._clears(world, light.s_line - s, light)
            elif state == "yellow" and self.yellow_go[k] and self._can_stop(world, d) \
                    and not self._clears(world, light.s_line - s, light):
                # slowed down since committing (e.g. behind a lead): go can turn into stop, never back
                self.yellow_go[k] = False
            if state == "red" or (state == "yellow" and not self.yellow_go[k]):
                v = min(v, self._profile(d))

        for k, stop in enumerate(world.scenario.stops):
            if k in self.served:
                continue
            d = stop.s_line - cfg.stop_margin - s
            if d < -cfg.stop_margin:
                self.served.add(k)
                continue
            if d > cfg.hazard_range:
                continue
            if d < 1.5 and world.speed < cfg.stop_speed:
                self.served.add(k)
                continue
            v = min(v, self._profile(d))

        for a in world.agents:
            if a.kind != "lead":
                continue
            gap = a.s - s - (a.length + world.ego_size[1]) / 2 - cfg.follow_gap
            if -10.0 < gap + cfg.follow_gap < cfg.hazard_range:
                v = min(v, a.speed + self._profile(gap) if gap > 0 else 0.0)
        return max(v, 0.0)

    def _clears(self, world: World, d_line: float, light) -> bool:
        remaining = light.green + light.yellow - (world.t + light.offset) % (light.green + light.yellow + light.red)
        return d_line < 0.8 * max(world.speed, 1e-9) * remaining

    def _can_stop(self, world: World, d: float) -> bool:
        v = world.speed
        reaction = v / world.frame_rate
        return d > reaction + v * v / (2 * world.vehicle.brake_decel)

    def __call__(self, world: World) -> np.ndarray:
        """Three ego-frame waypoints along the route, spaced by the target speed."""
        v = self.target_speed(world)
        step = v / world.frame_rate
        self.braking = v < 0.4 or world.speed > 1.1 * max(v, 1e-9)
        s_pts = [world.s + step * (k + 1) for k in range(3)]
        pts = np.array([world.route.point_at(sk) for sk in s_pts])
        ego_pts = world.ego.to_ego(pts)
        if step <= 1e-9:
            ego_pts = np.zeros((3, 2))
        return ego_pts
