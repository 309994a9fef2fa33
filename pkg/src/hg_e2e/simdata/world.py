"""Kinematic world state: ego bicycle model, scripted agents, light phases."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import VEHICLE_SIZE, Scenario


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    max_steer: float = 0.6  # rad at steer = 1
    max_accel: float = 4.0  # m/s^2 at throttle = 1
    brake_decel: float = 5.0
    drag: float = 0.15
    drag_quad: float = 0.01
    max_speed: float = 12.0


@dataclass
class Pose:
    x: float
    y: float
    heading: float

    def forward(self) -> np.ndarray:
        return np.array([math.sin(self.heading), math.cos(self.heading)])

    def to_ego(self, pts) -> np.ndarray:
        """World points (..., 2) -> ego frame (x right, y forward)."""
        d = np.asarray(pts, dtype=float) - np.array([self.x, self.y])
        s, c = math.sin(self.heading), math.cos(self.heading)
        return np.stack([d[..., 0] * c - d[..., 1] * s, d[..., 0] * s + d[..., 1] * c], axis=-1)

    def to_world(self, pts) -> np.ndarray:
        p = np.asarray(pts, dtype=float)
        s, c = math.sin(self.heading), math.cos(self.heading)
        x = p[..., 0] * c + p[..., 1] * s + self.x
        y = -p[..., 0] * s + p[..., 1] * c + self.y
        return np.stack([x, y], axis=-1)


@dataclass
class AgentState:
    kind: str
    s: float  # arc length for lead agents
    speed: float
    pose: Pose
    width: float
    length: float
    ident: int

    def corners(self) -> np.ndarray:
        return box_corners(self.pose, self.width, self.length)


def box_corners(pose: Pose, width: float, length: float) -> np.ndarray:
    hw, hl = width / 2, length / 2
    local = np.array([[-hw, -hl], [hw, -hl], [hw, hl], [-hw, hl]])
    return pose.to_world(local)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as (4, 2) corners."""
    for poly in (a, b):
        for k in range(4):
            edge = poly[(k + 1) % 4] - poly[k]
            axis = np.array([-edge[1], edge[0]])
            pa, pb = a @ axis, b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def bicycle_step(pose: Pose, speed: float, steer: float, throttle: float, brake: float,
                 dt: float, p: VehicleParams) -> tuple[Pose, float]:
    """One Euler step of the kinematic bicycle model; the pose is the box centre."""
    accel = throttle * p.max_accel - p.drag - p.drag_quad * speed * speed
    if brake:
        accel = -p.brake_decel
    if speed <= 0.0 and accel < 0:
        accel = 0.0
    delta = steer * p.max_steer
    heading = pose.heading + speed / p.wheelbase * math.tan(delta) * dt
    mid = (pose.heading + heading) / 2
    x = pose.x + speed * math.sin(mid) * dt
    y = pose.y + speed * math.cos(mid) * dt
    speed = float(np.clip(speed + accel * dt, 0.0, p.max_speed))
    return Pose(x, y, heading), speed


class World:
    """Mutable simulation state for one scenario."""

    def __init__(self, scenario: Scenario, frame_rate: float = 2.0, substeps: int = 5,
                 vehicle: VehicleParams = VehicleParams()):
        self.scenario = scenario
        self.route = scenario.route
        self.frame_rate = frame_rate
        self.substeps = substeps
        self.vehicle = vehicle
        self.t = 0.0
        self.frame = 0
        start = self.route.points[0]
        self.ego = Pose(float(start[0]), float(start[1]), self.route.heading_at(0.0))
        self.speed = 0.0
        self.ego_size = VEHICLE_SIZE
        self.s = 0.0
        self.lateral = 0.0
        self.agents: list[AgentState] = []
        for k, spec in enumerate(scenario.agents):
            self.agents.append(AgentState(spec.kind, spec.s, spec.speed, self._agent_pose(spec.s, spec.lateral),
                                          spec.width, spec.length, k))
        self._lateral_of = {k: spec.lateral for k, spec in enumerate(scenario.agents)}

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def _agent_pose(self, s: float, lateral: float) -> Pose:
        p = self.route.point_at(s)
        psi = self.route.heading_at(s)
        p = p + lateral * np.array([math.cos(psi), -math.sin(psi)])
        return Pose(float(p[0]), float(p[1]), psi)

    def light_states(self) -> list[str]:
        return [light.state(self.t) for light in self.scenario.lights]

    def ego_corners(self) -> np.ndarray:
        return box_corners(self.ego, *self.ego_size)

    def step(self, steer: float, throttle: float, brake: float) -> None:
        """Advance one frame, integrating ``substeps`` sub-intervals."""
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            self.ego, self.speed = bicycle_step(self.ego, self.speed, steer, throttle, brake, h, self.vehicle)
            for a in self.agents:
                if a.kind == "lead":
                    a.s += a.speed * h
                    a.pose = self._agent_pose(a.s, self._lateral_of[a.ident])
        self.t += self.dt
        self.frame += 1
        self.s, self.lateral = self.route.project([self.ego.x, self.ego.y], self.s)

    def collisions(self) -> list[AgentState]:
        ego = self.ego_corners()
        out = []
        for a in self.agents:
            if abs(a.pose.x - self.ego.x) > 8 or abs(a.pose.y - self.ego.y) > 8:
                continue
            if boxes_overlap(ego, a.corners()):
                out.append(a)
        return out

    def remove_agent(self, agent: AgentState) -> None:
        self.agents = [a for a in self.agents if a.ident != agent.ident]
