import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from hg_e2e.control import ControllerConfig, PIDController, desired_speed, heading_error

FR = ControllerConfig().frame_rate


def test_straight_ahead_at_desired_speed():
    wps = np.array([[0.0, 2.0], [0.0, 4.0], [0.0, 6.0]])
    speed = desired_speed(wps, FR)
    assert speed == 4.0
    cmd = PIDController()(wps, speed)
    assert abs(cmd.steer) < 1e-12
    assert cmd.brake == 0.0


def test_left_waypoints_steer_negative():
    wps = np.array([[-1.0, 2.0], [-2.0, 4.0], [-3.0, 6.0]])
    assert PIDController()(wps, 3.0).steer < 0
    assert PIDController()(-wps * [1, -1], 3.0).steer > 0


def test_coincident_waypoints_brake():
    cmd = PIDController()(np.zeros((3, 2)), 2.0)
    assert cmd.brake == 1.0 and cmd.throttle == 0.0


def test_overspeed_brakes_and_underspeed_accelerates():
    wps = np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])  # 2 m/s
    assert PIDController()(wps, 5.0).brake == 1.0
    cmd = PIDController()(wps, 0.0)
    assert cmd.brake == 0.0 and cmd.throttle > 0


def test_non_finite_input_brakes():
    wps = np.array([[0.0, np.nan], [0.0, 2.0], [0.0, 3.0]])
    cmd = PIDController()(wps, 1.0)
    assert (cmd.steer, cmd.throttle, cmd.brake) == (0.0, 0.0, 1.0)


def test_heading_error_uses_first_two_waypoints():
    wps = np.array([[1.0, 1.0], [1.0, 3.0], [50.0, 0.0]])
    assert heading_error(wps) == math.atan2(1.0, 2.0)
    assert desired_speed(np.array([[3.0, 4.0]]), 2.0) == 10.0


def test_integrator_is_clamped():
    ctrl = PIDController()
    wps = np.array([[5.0, 0.1], [5.0, 0.2], [5.0, 0.3]])
    for _ in range(1000):
        ctrl(wps, 0.0)
    assert abs(ctrl.lat.integral) <= 10.0


coord = st.floats(-30, 30, allow_nan=False)
waypoints = st.lists(st.tuples(coord, coord), min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(waypoints, st.floats(0, 20))
def test_mirror_symmetry(wps, speed):
    w = np.array(wps)
    a = PIDController()(w, speed)
    b = PIDController()(w * [-1.0, 1.0], speed)
    assert b.steer == -a.steer
    assert (a.throttle, a.brake) == (b.throttle, b.brake)


@settings(max_examples=200, deadline=None)
@given(st.lists(waypoints, min_size=1, max_size=6), st.floats(-1e6, 1e6))
def test_outputs_in_range(seq, speed):
    ctrl = PIDController()
    for wps in seq:
        cmd = ctrl(np.array(wps), speed)
        assert -1.0 <= cmd.steer <= 1.0
        assert 0.0 <= cmd.throttle <= 1.0
        assert cmd.brake in (0.0, 1.0)
