import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hg_e2e.evaluate import (
    PENALTIES,
    EpisodeLog,
    EvalLimits,
    ExpertDriver,
    RandomPolicy,
    StaticPolicy,
    benchmark_scenarios,
    driving_score,
    dumps_report,
    infraction_multiplier,
    infraction_score,
    metrics_report,
    route_completion,
    run_benchmark,
    run_episode,
)
from hg_e2e.simdata import build_route
from hg_e2e.simdata.rules import COLLISION, INFRACTIONS, RED_LIGHT, STOP_SIGN, Infraction
from hg_e2e.simdata.scenario import Scenario, StopSign, TrafficLight


def log(r, *kinds):
    return EpisodeLog("r", r, [Infraction(k, 0.0) for k in kinds])


class FixedLog(EpisodeLog):
    def __init__(self, r, p):
        super().__init__("r", r)
        self._p = p

    @property
    def multiplier(self):
        return self._p


# -- formulas ----------------------------------------------------------------------------

def test_route_completion_examples():
    assert route_completion([log(100), log(50)]) == 75.0
    assert route_completion([log(80)]) == 80.0
    values = [100.0, 37.5, 0.0, 62.5, 90.0, 12.5]
    assert route_completion([log(v) for v in values]) == 302.5 / 6


def test_driving_and_infraction_score_examples():
    logs = [FixedLog(100, 1.0), FixedLog(80, 0.5)]
    assert driving_score(logs) == 70.0
    assert infraction_score(logs) == 0.75
    assert route_completion(logs) == 90.0


def test_all_clean_ds_equals_rc():
    logs = [log(v) for v in (12.0, 99.0, 45.5)]
    assert driving_score(logs) == route_completion(logs)
    assert infraction_score(logs) == 1.0


def test_penalties_multiply():
    assert infraction_multiplier([Infraction(COLLISION, 0), Infraction(RED_LIGHT, 1)]) == pytest.approx(0.35, abs=1e-15)
    assert log(100, STOP_SIGN, STOP_SIGN).multiplier == pytest.approx(0.64)
    assert log(100).multiplier == 1.0


def _random_logs(rng, n):
    logs = []
    for _ in range(n):
        k = rng.integers(0, 4)
        logs.append(log(float(rng.uniform(0, 100)), *rng.choice(INFRACTIONS, size=k)))
    return logs


def test_monotonicity_on_100_random_logs():
    rng = np.random.default_rng(0)
    logs = _random_logs(rng, 100)
    ds, is_ = driving_score(logs), infraction_score(logs)
    for i in range(100):
        kind = str(rng.choice([COLLISION, RED_LIGHT, STOP_SIGN]))
        worse = list(logs)
        worse[i] = EpisodeLog("r", logs[i].completion, logs[i].infractions + [Infraction(kind, 9.0)])
        assert driving_score(worse) <= ds
        assert infraction_score(worse) <= is_


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.lists(st.sampled_from(INFRACTIONS), max_size=5)),
                min_size=1, max_size=12), st.randoms())
def test_metric_bounds_and_order_invariance(rows, rnd):
    logs = [log(r, *k) for r, k in rows]
    ds, rc, is_ = driving_score(logs), route_completion(logs), infraction_score(logs)
    assert 0 <= ds <= rc + 1e-9 and rc <= 100
    assert 0 <= is_ <= 1
    shuffled = list(logs)
    rnd.shuffle(shuffled)
    assert driving_score(shuffled) == pytest.approx(ds, rel=1e-12, abs=1e-12)
    assert infraction_score(shuffled) == pytest.approx(is_, rel=1e-12)


# -- rollouts ----------------------------------------------------------------------------

def straight(lights=(), stops=()):
    return Scenario(build_route([("straight", 50.0)]), list(lights), list(stops), [], 0, "straight")


class Scripted:
    """Drives straight ahead at ``speed`` whatever happens."""

    name = "scripted"

    def __init__(self, speed=4.0):
        self.speed = speed

    def reset(self, scenario):
        pass

    def __call__(self, world):
        return np.arange(1, 4)[:, None] * np.array([0.0, self.speed / world.frame_rate])


def test_expert_on_empty_route_is_perfect():
    g = run_episode(ExpertDriver(), straight())
    assert (g.completion, g.multiplier, g.infractions, g.status) == (100.0, 1.0, [], "completed")


def test_static_policy_scores_zero():
    g = run_episode(StaticPolicy(), straight())
    assert g.completion == pytest.approx(0.0, abs=1e-9)
    assert g.status == "blocked"
    g = run_episode(StaticPolicy(), straight(), EvalLimits(max_seconds=10.0))
    assert g.status == "timeout" and g.completion == pytest.approx(0.0, abs=1e-9)


def test_scripted_run_through_one_red_light():
    always_red = TrafficLight(20.0, 0.0, 0.0, 10.0, 0.0)
    g = run_episode(Scripted(), straight(lights=[always_red]))
    assert [e.kind for e in g.infractions] == [RED_LIGHT]
    assert g.status == "completed" and g.multiplier == PENALTIES[RED_LIGHT]


def test_scripted_run_through_stop_sign():
    g = run_episode(Scripted(), straight(stops=[StopSign(20.0)]))
    assert [e.kind for e in g.infractions] == [STOP_SIGN]


def test_expert_honours_the_same_red_light():
    light = TrafficLight(20.0, 0.0, 0.0, 10.0, 0.0)
    g = run_episode(ExpertDriver(), straight(lights=[light]), EvalLimits(max_seconds=20.0))
    assert g.infractions == [] and g.completion < 50


class NaNPolicy(Scripted):
    def __call__(self, world):
        if world.frame == 4:
            return np.full((3, 2), np.nan)
        return super().__call__(world)


def test_non_finite_waypoints_abort_the_episode():
    g = run_episode(NaNPolicy(), straight())
    assert g.status == "aborted"
    assert 0 < g.completion < 100


def test_random_policy_is_seeded():
    sc = benchmark_scenarios(3)
    a = [g.to_dict() for g in run_benchmark(RandomPolicy(1), sc)]
    b = [g.to_dict() for g in run_benchmark(RandomPolicy(1), sc)]
    assert a == b


def test_benchmark_parallel_matches_serial():
    sc = benchmark_scenarios(3)
    a = [g.to_dict() for g in run_benchmark(ExpertDriver(), sc, jobs=1)]
    b = [g.to_dict() for g in run_benchmark(ExpertDriver(), sc, jobs=2)]
    assert a == b


def test_report_schema_and_determinism():
    sc = benchmark_scenarios(2)
    runs = {s: run_benchmark(RandomPolicy(s), sc) for s in (0, 1, 2)}
    rep = metrics_report(runs, "random")
    assert set(rep["aggregate"]) == {"DS", "RC", "IS"}
    assert set(rep["aggregate"]["DS"]) == {"mean", "std"}
    assert len(rep["routes"]["0"]) == 2
    ds = [rep["per_seed"][str(s)]["DS"] for s in (0, 1, 2)]
    assert rep["aggregate"]["DS"]["mean"] == pytest.approx(np.mean(ds))
    again = metrics_report({s: run_benchmark(RandomPolicy(s), sc) for s in (0, 1, 2)}, "random")
    assert dumps_report(rep) == dumps_report(again)
