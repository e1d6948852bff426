import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from momentum_tsc.emissions import CAR_EMISSIONS, EmissionParams, MetricsAccumulator, co2_rate, report_is_finite
from momentum_tsc.env import TrafficSignalEnv, run_episode
from momentum_tsc.microsim import BUS, CAR, TRUCK, SimConfig, init_sim, insert_vehicle, step


def test_idle_rate():
    assert co2_rate(0.0, 0.0) == CAR_EMISSIONS.idle == 0.45


def test_positive_acceleration_costs_more():
    assert co2_rate(10.0, 2.0) > co2_rate(10.0, 0.0)
    assert co2_rate(10.0, -3.0) == co2_rate(10.0, 0.0)


def test_bus_emits_eight_cars():
    assert co2_rate(7.0, 1.0, BUS.emissions) == pytest.approx(8.0 * co2_rate(7.0, 1.0, CAR.emissions))


def test_stated_polynomial():
    v, a = 10.0, 1.5
    expected = 0.45 + 0.03 * v + 0.002 * v ** 2 + 0.0001 * v ** 3 + 0.06 * a * v
    assert co2_rate(v, a) == pytest.approx(expected)


def test_negative_speed_rejected():
    with pytest.raises(ValueError):
        co2_rate(-1.0, 0.0)


@given(st.floats(0, 30), st.floats(0, 30))
def test_rate_increasing_in_speed(v1, v2):
    lo, hi = sorted((v1, v2))
    if hi - lo > 1e-6:
        assert co2_rate(lo, 0.0) < co2_rate(hi, 0.0)


@given(st.floats(0, 30), st.floats(-5, 5), st.floats(0.1, 20))
def test_rate_linear_in_mass_scale(v, a, scale):
    one = co2_rate(v, a, EmissionParams(mass_scale=scale))
    two = co2_rate(v, a, EmissionParams(mass_scale=2 * scale))
    assert two == pytest.approx(2 * one, rel=1e-12)
    assert one > 0


def test_empty_episode_report():
    env = TrafficSignalEnv(SimConfig(arrival_rate_range=(0.0, 0.0)))
    r = run_episode(env, lambda e, o: 0, 0)
    assert (r.mean_waiting, r.mean_queue, r.throughput, r.mean_travel_time, r.co2_total) == (0, 0, 0, 0, 0)


def test_single_vehicle_on_permanent_green():
    state = init_sim(SimConfig(arrival_rate_range=(0.0, 0.0)))
    insert_vehicle(state, 0, 0.0, speed=CAR.max_speed)
    while state.exited_count == 0:
        step(state, 0)
    report = state.metrics.finalize(state.in_network_wait())
    # 150 m at constant 13.89 m/s crosses during the 11th second, then 2 s in the junction
    assert report.throughput == 1 and report.mean_waiting == 0.0
    assert report.mean_travel_time == 13.0


def test_vehicle_held_at_red_for_twenty_seconds():
    state = init_sim(SimConfig(arrival_rate_range=(0.0, 0.0)))
    insert_vehicle(state, 2, 150.0)
    for _ in range(4):
        step(state, 0)
    # released by the switch at t = 20; the 2 s of yellow still hold it
    for _ in range(3):
        step(state, 1)
    report = state.metrics.finalize(state.in_network_wait())
    assert report.throughput == 1
    assert abs(report.mean_waiting - 22.0) <= 1.0
    assert report.mean_waiting == 22.0


def test_accumulator_counts():
    acc = MetricsAccumulator()
    acc.add_substep(2, [(30.0, 4.0)], 1.5, spawned=3, blocked=1)
    acc.add_substep(4, [], 0.5)
    r = acc.finalize(in_network_wait=6.0)
    assert (r.mean_queue, r.throughput, r.mean_travel_time, r.mean_waiting, r.co2_total) == (3.0, 1, 30.0, 10.0, 2.0)
    assert report_is_finite(r)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_report_reconciles_with_trace(tmp_path, seed):
    env = TrafficSignalEnv(SimConfig(arrival_rate_range=(0.1, 0.3), class_mixture={"car": 0.7, "truck": 0.3}),
                           record_trace=True)
    rng = np.random.default_rng(seed)
    report = run_episode(env, lambda e, o: int(rng.integers(2)), seed)
    signal, _ = oracles.read_trace(*env.state.trace.write(tmp_path / "ep"))
    assert report.mean_queue == pytest.approx(oracles.mean_queue(signal), abs=1e-9)
    co2 = [r["co2"] for r in signal]
    assert all(c >= 0 for c in co2) and report.co2_total == pytest.approx(sum(co2), rel=1e-12)
    s = env.state
    assert report.throughput <= report.spawned
    assert report.throughput + s.in_network() + report.blocked == report.spawned + report.blocked
    assert s.spawned_count + s.blocked_count == report.spawned + report.blocked
