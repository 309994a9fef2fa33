"""Routes, road furniture and agents of the toy driving world.

World frame: ``X`` east, ``Y`` north, metres.  Headings are measured from
north, clockwise positive, so a heading ``psi`` points along
``(sin psi, cos psi)`` and a positive heading change is a right turn.  This
matches the ego convention of :mod:`hg_e2e.geometry` (x right, y forward).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..numeric import make_rng

ROUTE_STEP = 0.25  # metres between polyline samples
TAIL = 20.0  # straight extension past the goal so future labels exist at the end
LANE_HALF_WIDTH = 1.75
ROAD_HALF_WIDTH = 3.5
VEHICLE_SIZE = (1.9, 4.5)  # width, length
VEHICLE_HEIGHT = 1.6


class Route:
    """Dense polyline with arc-length parameterisation.

    ``length`` is the distance to the goal; the polyline continues ``TAIL``
    metres further in a straight line.
    """

    def __init__(self, points: np.ndarray, length: float, junctions: list[float]):
        self.points = np.asarray(points, dtype=float)
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        d = np.gradient(self.points, axis=0)
        self.headings = np.arctan2(d[:, 0], d[:, 1])
        self.length = float(length)
        self.junctions = list(junctions)

    @property
    def total(self) -> float:
        return float(self.s[-1])

    def index_at(self, s: float) -> int:
        return int(np.clip(np.searchsorted(self.s, s), 0, len(self.s) - 1))

    def point_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.s[-1]))
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.array([x, y])

    def heading_at(self, s: float) -> float:
        return float(self.headings[self.index_at(s)])

    def project(self, p, s_hint: float | None = None, window: tuple[float, float] = (-10.0, 30.0)):
        """Arc length and signed lateral offset (positive right of travel) of point ``p``."""
        p = np.asarray(p, dtype=float)
        if s_hint is None:
            lo, hi = 0, len(self.s)
        else:
            lo = int(np.searchsorted(self.s, s_hint + window[0]))
            hi = int(np.searchsorted(self.s, s_hint + window[1])) + 1
        pts = self.points[lo:hi]
        d2 = np.sum((pts - p) ** 2, axis=1)
        k = lo + int(np.argmin(d2))
        psi = self.headings[k]
        delta = p - self.points[k]
        along = delta[0] * math.sin(psi) + delta[1] * math.cos(psi)
        lateral = delta[0] * math.cos(psi) - delta[1] * math.sin(psi)
        return float(self.s[k] + along), float(lateral)

    def distance(self, pts: np.ndarray, s_lo: float = -np.inf, s_hi: float = np.inf) -> np.ndarray:
        """Distance from each point in ``pts`` (..., 2) to the polyline section [s_lo, s_hi]."""
        lo = int(np.searchsorted(self.s, s_lo))
        hi = int(np.searchsorted(self.s, s_hi)) + 1
        poly = self.points[lo:hi:2]
        flat = pts.reshape(-1, 2)
        d2 = ((flat[:, None, :] - poly[None, :, :]) ** 2).sum(-1).min(1)
        return np.sqrt(d2).reshape(pts.shape[:-1])


def build_route(segments: list[tuple[str, float]], start=(0.0, 0.0), heading: float = 0.0,
                turn_radius: float = 8.0) -> Route:
    """Chain ``("straight", length)`` and ``("left"|"right", angle_deg)`` pieces.

    Returns the route with junction arc-lengths at the middle of every turn.
    """
    pts = [np.array(start, dtype=float)]
    psi = heading
    junctions = []
    s = 0.0
    for kind, amount in segments:
        if kind == "straight":
            n = max(int(round(amount / ROUTE_STEP)), 1)
            step = amount / n
            for _ in range(n):
                pts.append(pts[-1] + step * np.array([math.sin(psi), math.cos(psi)]))
            s += amount
        else:
            sign = 1.0 if kind == "right" else -1.0
            angle = math.radians(amount)
            arc = turn_radius * angle
            n = max(int(round(arc / ROUTE_STEP)), 1)
            dpsi = sign * angle / n
            step = arc / n
            junctions.append(s + arc / 2)
            for _ in range(n):
                mid = psi + dpsi / 2
                pts.append(pts[-1] + step * np.array([math.sin(mid), math.cos(mid)]))
                psi += dpsi
            s += arc
    length = s
    n = int(round(TAIL / ROUTE_STEP))
    for _ in range(n):
        pts.append(pts[-1] + ROUTE_STEP * np.array([math.sin(psi), math.cos(psi)]))
    return Route(np.array(pts), length, junctions)


@dataclass(frozen=True)
class TrafficLight:
    s_line: float
    green: float
    yellow: float
    red: float
    offset: float

    def state(self, t: float) -> str:
        cycle = self.green + self.yellow + self.red
        phase = (t + self.offset) % cycle
        if phase < self.green:
            return "green"
        if phase < self.green + self.yellow:
            return "yellow"
        return "red"


@dataclass(frozen=True)
class StopSign:
    s_line: float


@dataclass(frozen=True)
class AgentSpec:
    """``lead`` agents drive along the route from ``s`` at ``speed``;
    ``parked`` agents sit at ``lateral`` metres beside the route at ``s``."""

    kind: str
    s: float
    speed: float = 0.0
    lateral: float = 0.0
    width: float = VEHICLE_SIZE[0]
    length: float = VEHICLE_SIZE[1]


@dataclass(frozen=True)
class ScenarioConfig:
    straights: tuple[float, float] = (18.0, 30.0)
    turns: tuple[int, int] = (1, 2)
    turn_radius: float = 8.0
    light_prob: float = 0.5
    stop_prob: float = 0.3
    leads: tuple[int, int] = (0, 1)
    lead_speed: tuple[float, float] = (2.0, 3.5)
    parked: tuple[int, int] = (0, 3)
    cycle_green: tuple[float, float] = (6.0, 10.0)
    cycle_yellow: float = 3.0
    cycle_red: tuple[float, float] = (5.0, 8.0)


EMPTY_WORLD = ScenarioConfig(light_prob=0.0, stop_prob=0.0, leads=(0, 0), parked=(0, 0))
TOY_WORLD = ScenarioConfig()
WORLD_PRESETS = {"empty": EMPTY_WORLD, "toy": TOY_WORLD}


@dataclass
class Scenario:
    route: Route
    lights: list[TrafficLight] = field(default_factory=list)
    stops: list[StopSign] = field(default_factory=list)
    agents: list[AgentSpec] = field(default_factory=list)
    seed: int = 0
    route_id: str = ""


STOP_LINE_BEFORE_JUNCTION = 10.0


def make_scenario(seed: int, cfg: ScenarioConfig = TOY_WORLD, route_id: str = "") -> Scenario:
    """Random route of straights joined by 90 degree turns.

    Headings stay within [-90, 90] degrees of north, so the route never heads
    south and cannot cross itself.
    """
    rng = make_rng(seed, "scenario", route_id)
    n_turns = int(rng.integers(cfg.turns[0], cfg.turns[1] + 1))
    segments: list[tuple[str, float]] = [("straight", float(rng.uniform(*cfg.straights)))]
    heading = 0
    for _ in range(n_turns):
        options = [d for d in ("left", "right") if -90 <= heading + (90 if d == "right" else -90) <= 90]
        d = options[int(rng.integers(len(options)))]
        heading += 90 if d == "right" else -90
        segments.append((d, 90.0))
        segments.append(("straight", float(rng.uniform(*cfg.straights))))
    route = build_route(segments, turn_radius=cfg.turn_radius)
    arc_half = cfg.turn_radius * math.pi / 4

    lights, stops = [], []
    for sj in route.junctions:
        line = sj - arc_half - 1.0
        if line < STOP_LINE_BEFORE_JUNCTION:
            continue
        u = rng.uniform()
        if u < cfg.light_prob:
            lights.append(TrafficLight(line, float(rng.uniform(*cfg.cycle_green)), cfg.cycle_yellow,
                                       float(rng.uniform(*cfg.cycle_red)), float(rng.uniform(0, 20))))
        elif u < cfg.light_prob + cfg.stop_prob:
            stops.append(StopSign(line))

    agents = []
    for _ in range(int(rng.integers(cfg.leads[0], cfg.leads[1] + 1))):
        agents.append(AgentSpec("lead", float(rng.uniform(14.0, 24.0)), float(rng.uniform(*cfg.lead_speed))))
    for _ in range(int(rng.integers(cfg.parked[0], cfg.parked[1] + 1))):
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        agents.append(AgentSpec("parked", float(rng.uniform(8.0, route.length)), 0.0, side * 5.5))
    return Scenario(route, lights, stops, agents, seed, route_id)
