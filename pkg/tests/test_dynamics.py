import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecoassist import dynamics
from ecoassist.dynamics import (
    FuelMap, Powertrain, PowertrainFormatError, VehicleParams, VehicleState, power_reserve, resistance_force,
    step,
)

P = VehicleParams()


@pytest.fixture(scope="module")
def pt():
    return Powertrain.load()


def test_resistance_rolling_only():
    # m g f = 7000 * 9.81 * 0.015
    assert resistance_force(0.0, 0.0, P) == pytest.approx(1030.05, abs=1e-9)


def test_resistance_with_drag():
    oracle = 0.5 * 1.2 * 7.71 * 0.08 * 20.0**2 + 7000 * 9.81 * 0.015
    assert resistance_force(20.0, 0.0, P) == pytest.approx(oracle, rel=1e-12)
    assert resistance_force(20.0, 0.0, P) == pytest.approx(1178.08, abs=5e-3)


def test_resistance_vanishes():
    p = VehicleParams(f_roll=1e-300)
    assert resistance_force(0.0, 0.0, p) == pytest.approx(0.0, abs=1e-290)


def test_resistance_grade_adds_weight_component():
    theta = math.atan(0.04)
    expected = 7000 * 9.81 * (0.015 * math.cos(theta) + math.sin(theta))
    assert resistance_force(0.0, theta, P) == pytest.approx(expected, rel=1e-12)


def test_step_exact_compensation_keeps_speed():
    s = VehicleState(v_h=12.0, v_l=15.0, z=40.0)
    T = resistance_force(12.0, 0.0, P) * P.r_w
    nxt = step(s, T, 0, 0.0, 0.1, P)
    assert nxt.v_h == pytest.approx(12.0, abs=1e-12)
    assert nxt.z == pytest.approx(40.0 + 3.0 * 0.1, abs=1e-12)


def test_step_equal_speeds_gap_constant():
    s = VehicleState(v_h=10.0, v_l=10.0, z=25.0)
    nxt = step(s, resistance_force(10.0, 0.0, P) * P.r_w, 0, 0.0, 0.1, P)
    assert nxt.z == 25.0


def test_step_hand_evaluated_euler():
    s = VehicleState(v_h=20.0, v_l=20.0, z=50.0, m_v=7000.0)
    nxt = step(s, 5000.0, 0, 0.0, 0.1, P)
    F_r = 0.5 * 1.2 * 7.71 * 0.08 * 400.0 + 7000 * 9.81 * 0.015
    oracle = 20.0 + 0.1 * (5000.0 / (0.498 * 7000.0) - F_r / 7000.0)
    assert nxt.v_h == pytest.approx(oracle, rel=1e-14)
    assert nxt.v_h == pytest.approx(20.1266, abs=5e-5)
    assert nxt.a == pytest.approx((oracle - 20.0) / 0.1, rel=1e-9)


def test_step_floors_velocities():
    s = VehicleState(v_h=0.1, v_l=0.05, z=10.0)
    nxt = step(s, -40000.0, 0, -5.0, 0.1, P)
    assert nxt.v_h == 0.0 and nxt.v_l == 0.0


def test_step_gear_clamped():
    assert step(VehicleState(5, 5, 10, n_g=10), 0.0, 1, 0.0, 0.1, P).n_g == 10
    assert step(VehicleState(5, 5, 10, n_g=1), 0.0, -1, 0.0, 0.1, P).n_g == 1
    assert step(VehicleState(5, 5, 10, n_g=4), 0.0, 1, 0.0, 0.1, P).n_g == 5


@pytest.mark.parametrize("T, dt", [(float("nan"), 0.1), (float("inf"), 0.1), (0.0, 0.0), (0.0, -0.1)])
def test_step_rejects_bad_inputs(T, dt):
    with pytest.raises(ValueError):
        step(VehicleState(5, 5, 10), T, 0, 0.0, dt, P)


def test_step_rejects_gear_jump():
    with pytest.raises(ValueError):
        step(VehicleState(5, 5, 10), 0.0, 2, 0.0, 0.1, P)


def test_semi_implicit_uses_new_velocities():
    s = VehicleState(v_h=10.0, v_l=10.0, z=30.0)
    nxt = step(s, 20000.0, 0, 0.0, 0.1, P, scheme="semi_implicit")
    assert nxt.z == pytest.approx(30.0 + (nxt.v_l - nxt.v_h) * 0.1, abs=1e-12)
    with pytest.raises(ValueError):
        step(s, 0.0, 0, 0.0, 0.1, P, scheme="rk4")


def test_in_range_flag():
    s = VehicleState(v_h=0.0, v_l=10.0, z=349.5)
    assert not step(s, 0.0, 0, 0.0, 0.1, P).in_range


@settings(max_examples=200, deadline=None)
@given(
    v_h=st.floats(0, 35), v_l=st.floats(0, 35), z=st.floats(0.5, 400),
    T=st.floats(-45000, 45000), a_l=st.floats(-6, 3), dt=st.floats(0.01, 0.5),
)
def test_step_properties(v_h, v_l, z, T, a_l, dt):
    s = VehicleState(v_h=v_h, v_l=v_l, z=z, n_g=5)
    nxt = step(s, T, 0, a_l, dt, P)
    assert nxt.v_h >= 0 and nxt.v_l >= 0
    assert nxt.z == pytest.approx(z + (v_l - v_h) * dt, abs=1e-9)
    assert nxt.a == pytest.approx((nxt.v_h - v_h) / dt, abs=1e-9)


# ---------------------------------------------------------------- powertrain
def test_engine_speed_ratio_arithmetic():
    data = {
        "format": 1,
        "gear_ratios": [1.0 * 0.9**-i for i in range(10)][::-1],
        "final_drive": 3.5,
        "engine_speed_limits": [50, 300],
        "torque_curve": [[50, 500], [300, 500]],
        "fuel_map": {"omega": [0, 400], "torque": [0, 1000], "rate": [[0, 1], [1, 2]]},
    }
    # last gear ratio is 1.0
    data["gear_ratios"] = sorted(data["gear_ratios"], reverse=True)
    p = Powertrain.from_dict(data)
    assert p.gear_ratios[-1] == pytest.approx(1.0)
    point = p.engine_state(15.0, 0.0, 10)
    assert point.omega == pytest.approx(15.0 / 0.498 * 3.5, rel=1e-12)
    assert point.omega == pytest.approx(105.42, abs=5e-3)
    assert point.T_e == 0.0


def test_engine_state_zero_speed_flags(pt):
    point = pt.engine_state(0.0, 1000.0, 3)
    assert point.omega == 0.0
    assert point.omega_clamped == pt.speed_limits[0]
    # launch in first gear is exempt from the speed-range flag
    assert pt.engine_state(0.0, 1000.0, 1).feasible
    assert not pt.engine_state(5.0, 0.0, 10).feasible


def test_engine_torque_clamped_to_envelope(pt):
    point = pt.engine_state(10.0, 1e6, 4)
    assert point.T_e_clamped == pytest.approx(pt.max_engine_torque(point.omega_clamped))
    assert pt.engine_state(10.0, -5000.0, 4).T_e_clamped == 0.0


def test_idle_fuel_from_shipped_map(pt):
    lo = pt.speed_limits[0]
    expected = float(np.interp(lo, pt.fuel_map.omega, pt.fuel_map.rate[:, 0]))
    point = dynamics.EngineOperatingPoint(lo, 0.0, lo, 0.0, True)
    assert pt.fuel_rate(point) == pytest.approx(expected, rel=1e-12)
    assert 0.1 < expected < 0.5


def test_fuel_map_node_and_midpoint(pt):
    fm = pt.fuel_map
    for i, j in [(0, 0), (3, 7), (11, 11), (5, 2)]:
        assert fm(fm.omega[i], fm.torque[j]) == fm.rate[i, j]
    mid = 0.5 * (fm.omega[4] + fm.omega[5])
    assert fm(mid, fm.torque[6]) == pytest.approx(0.5 * (fm.rate[4, 6] + fm.rate[5, 6]), rel=1e-12)


def test_fuel_map_clips_outside_grid(pt):
    fm = pt.fuel_map
    assert fm(-100.0, -5.0) == fm.rate[0, 0]
    assert fm(1e4, 1e4) == fm.rate[-1, -1]


def test_fuel_map_vectorized(pt):
    out = pt.fuel_map(np.array([100.0, 150.0]), np.array([200.0, 400.0]))
    assert out.shape == (2,)


@pytest.mark.parametrize("bad", [
    {"rate": [[0, 1]]},
    {"omega": [1, 0]},
    {"rate": [[0, -1], [1, 2]]},
])
def test_fuel_map_validation(bad):
    spec = {"omega": [0, 1], "torque": [0, 1], "rate": [[0, 1], [1, 2]]}
    spec.update(bad)
    with pytest.raises(PowertrainFormatError):
        FuelMap(**spec)


def test_powertrain_format_version():
    with pytest.raises(PowertrainFormatError):
        Powertrain.from_dict({"format": 2})


def test_power_reserve_examples():
    assert power_reserve(150.0, 500.0, 800.0) == 45000.0
    assert power_reserve(150.0, 800.0, 800.0) == 0.0
    assert power_reserve(0.0, 100.0, 800.0) == 0.0


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0, 35), T=st.floats(-50000, 50000), n=st.integers(1, 10))
def test_power_reserve_nonnegative_and_bounded(pt, v, T, n):
    point = pt.engine_state(v, T, n)
    pr = pt.power_reserve(point)
    assert 0 <= pr <= pt.max_engine_torque(point.omega_clamped) * point.omega_clamped + 1e-9
    assert pt.fuel_rate(point) >= 0


def test_gear_feasibility(pt):
    assert pt.gear_feasible(0.5, 1) and not pt.gear_feasible(0.5, 2)
    for v in (3.0, 10.0, 20.0):
        feasible = [n for n in range(1, 11) if pt.gear_feasible(v, n)]
        assert feasible, v
        for n in feasible:
            lo, hi = pt.speed_limits
            assert lo <= pt.engine_speed(v, n) <= hi


def test_torque_limits(pt):
    assert pt.gear_feasible(10.0, 7)
    lo, hi = pt.torque_limits(10.0, 7)
    assert lo == -pt.max_brake_torque
    omega = pt.engine_speed(10.0, 7)
    assert hi == pytest.approx(pt.max_engine_torque(omega) * pt.total_ratio(7))
    assert pt.clamp_torque(10.0, 1e9, 7) == hi
    assert isinstance(pt.max_wheel_torque, float)
