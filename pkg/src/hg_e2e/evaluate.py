"""Closed-loop rollouts in the toy world and the RC / IS / DS metric suite.

A policy is any object with ``reset(scenario)`` and ``__call__(world)``
returning (3, 2) ego-frame waypoints; the PID controller turns those into
vehicle commands.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .control import ControllerConfig, PIDController
from .numeric import NonFiniteError, derive_seed, make_rng, no_grad
from .simdata.dataset import ego_history, sense
from .simdata.expert import ExpertPolicy
from .simdata.rules import COLLISION, OFF_ROUTE, RED_LIGHT, STOP_SIGN, Infraction, RuleMonitor
from .simdata.scenario import WORLD_PRESETS, Scenario, make_scenario
from .simdata.world import Pose, World

PENALTIES = {COLLISION: 0.50, RED_LIGHT: 0.70, STOP_SIGN: 0.80, OFF_ROUTE: 1.0}
BENCHMARK_SEED = 2024


@dataclass(frozen=True)
class EvalLimits:
    max_seconds: float = 120.0
    blocked_seconds: float = 30.0
    blocked_speed: float = 0.1
    frame_rate: float = 2.0


@dataclass
class EpisodeLog:
    route_id: str
    completion: float  # percent of route length
    infractions: list[Infraction] = field(default_factory=list)
    status: str = "completed"  # completed | timeout | blocked | off_route | aborted
    duration: float = 0.0

    @property
    def multiplier(self) -> float:
        return infraction_multiplier(self.infractions)

    def to_dict(self) -> dict:
        return {"route_id": self.route_id, "completion": self.completion, "multiplier": self.multiplier,
                "status": self.status, "duration": self.duration,
                "infractions": [{"type": e.kind, "t": e.t, "detail": e.detail} for e in self.infractions]}


def infraction_multiplier(infractions, penalties=PENALTIES) -> float:
    p = 1.0
    for e in infractions:
        p *= penalties[e.kind]
    return min(max(p, 0.0), 1.0)


# -- metrics -----------------------------------------------------------------------------

def route_completion(logs) -> float:
    return float(np.mean([g.completion for g in logs]))


def driving_score(logs) -> float:
    return float(np.mean([g.completion * g.multiplier for g in logs]))


def infraction_score(logs) -> float:
    return float(np.mean([g.multiplier for g in logs]))


def summarize(logs) -> dict:
    return {"RC": route_completion(logs), "IS": infraction_score(logs), "DS": driving_score(logs)}


# -- policies ----------------------------------------------------------------------------

class ExpertDriver:
    """The privileged data-generation expert."""

    name = "expert"

    def __init__(self):
        self.expert = ExpertPolicy()

    def reset(self, scenario: Scenario) -> None:
        self.expert.reset()

    def __call__(self, world: World) -> np.ndarray:
        return self.expert(world)


class RandomPolicy:
    """Random waypoints: a heading within +-45 degrees and a speed in [0, 6] m/s, redrawn each second."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = make_rng(seed, "random-policy")
        self.aim = (0.0, 0.0)

    def reset(self, scenario: Scenario) -> None:
        self.rng = make_rng(self.seed, "random-policy", scenario.route_id)

    def __call__(self, world: World) -> np.ndarray:
        if world.frame % max(int(world.frame_rate), 1) == 0:
            self.aim = (float(self.rng.uniform(-math.pi / 4, math.pi / 4)), float(self.rng.uniform(0.0, 6.0)))
        bearing, speed = self.aim
        step = speed / world.frame_rate
        k = np.arange(1, 4)[:, None]
        return k * step * np.array([math.sin(bearing), math.cos(bearing)])


class StaticPolicy:
    """Never moves."""

    name = "static"

    def reset(self, scenario: Scenario) -> None:
        pass

    def __call__(self, world: World) -> np.ndarray:
        return np.zeros((3, 2))


class ModelPolicy:
    """Runs the learned model on rendered sensors and returns its predicted waypoints."""

    name = "model"

    def __init__(self, model, history: int = 3, density_side: int = 4):
        self.model = model
        self.cfg: ModelConfig = model.config
        self.history = history
        self.density_side = density_side
        self.poses: list[tuple[float, float, float]] = []

    def reset(self, scenario: Scenario) -> None:
        self.poses = []

    def __call__(self, world: World) -> np.ndarray:
        obs = sense(world, self.cfg.sensor, self.density_side, human=False)
        pose = world.ego
        self.poses.append((pose.x, pose.y, pose.heading))
        hist = ego_history(self.poses, len(self.poses) - 1, self.history, Pose(*self.poses[-1]))
        with no_grad():
            pred = self.model(obs["image"][None], obs["bev"][None], hist[None], obs["goal"][None])
        return pred.waypoints.data[0]


# -- rollouts ----------------------------------------------------------------------------

def run_episode(policy, scenario: Scenario, limits: EvalLimits = EvalLimits()) -> EpisodeLog:
    """Drive ``scenario`` with ``policy`` until completion, timeout, blocking, off-route or abort."""
    world = World(scenario, limits.frame_rate)
    ctrl = PIDController(ControllerConfig(frame_rate=limits.frame_rate))
    monitor = RuleMonitor(world)
    policy.reset(scenario)
    length = scenario.route.length
    events: list[Infraction] = []
    progress = 0.0
    blocked = 0.0
    status = "timeout"
    while world.t < limits.max_seconds:
        try:
            wps = np.asarray(policy(world), dtype=float)
        except NonFiniteError:
            wps = np.full((3, 2), np.nan)
        if wps.shape != (3, 2) or not np.all(np.isfinite(wps)):
            status = "aborted"
            break
        cmd = ctrl(wps, world.speed)
        world.step(cmd.steer, cmd.throttle, cmd.brake)
        new = monitor.update(world)
        events += new
        progress = max(progress, min(world.s, length))
        if any(e.kind == OFF_ROUTE for e in new):
            status = "off_route"
            break
        if world.s >= length:
            status = "completed"
            break
        blocked = blocked + world.dt if world.speed < limits.blocked_speed else 0.0
        if blocked >= limits.blocked_seconds:
            status = "blocked"
            break
    completion = 100.0 if status == "completed" else 100.0 * progress / length
    return EpisodeLog(scenario.route_id, completion, events, status, world.t)


def benchmark_scenarios(n_routes: int, world: str = "toy", seed: int = BENCHMARK_SEED) -> list[Scenario]:
    """Evaluation routes; route ids are disjoint from the machine and human training splits."""
    cfg = WORLD_PRESETS[world]
    return [make_scenario(derive_seed(seed, "benchmark", k), cfg, f"eval:r{k}") for k in range(n_routes)]


def _run_one(args):
    policy, scenario, limits = args
    return run_episode(policy, scenario, limits)


def run_benchmark(policy, scenarios, limits: EvalLimits = EvalLimits(), jobs: int = 1) -> list[EpisodeLog]:
    """Every scenario gets a fresh ``reset``; results are identical for any ``jobs``."""
    work = [(policy, sc, limits) for sc in scenarios]
    if jobs <= 1 or len(work) <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "std": float(v.std())}


def metrics_report(runs: dict[int, list[EpisodeLog]], policy: str = "") -> dict:
    """``runs`` maps seed -> logs.  Per-route rows plus mean/std of RC, IS, DS across seeds."""
    per_seed = {int(s): summarize(logs) for s, logs in sorted(runs.items())}
    return {
        "policy": policy,
        "seeds": sorted(per_seed),
        "per_seed": {str(s): m for s, m in per_seed.items()},
        "routes": {str(s): [g.to_dict() for g in logs] for s, logs in sorted(runs.items())},
        "aggregate": {k: _mean_std([m[k] for m in per_seed.values()]) for k in ("DS", "RC", "IS")},
    }


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"
