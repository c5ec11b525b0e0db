from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mc3.chanmodel import (
    ActorProfile,
    MemorySystemModel,
    NoiseModel,
    PiecewiseLinear,
    SlowdownCurve,
    cpu_receiver,
    default_calibration,
    default_slowdown_curve,
    gpu_receiver,
    noiseless,
    orin_agx_like,
)
from mc3.errors import ConfigError, UnknownActor
from mc3.units import MiB

from oracles import brute_force_feasible


def two_party(tx_util, rx_demand=5e9, total=100e9):
    m = MemorySystemModel(total, default_slowdown_curve())
    m.add_actor(ActorProfile("tx", tx_util * total, role="transmitter"))
    m.add_actor(ActorProfile("rx", rx_demand, role="receiver"))
    return m


def test_curve_validation():
    with pytest.raises(ConfigError):
        SlowdownCurve([(0, 0.1), (1, 0.5)])
    with pytest.raises(ConfigError):
        SlowdownCurve([(0, 0), (1, 1.0)])
    with pytest.raises(ConfigError):
        PiecewiseLinear([(0, 1), (1, 0)])


def test_default_curve_anchors():
    c = default_slowdown_curve()
    assert c(0) == 0
    assert c(0.10) == 0
    assert c(0.20) == pytest.approx(0.10)
    assert default_calibration().total_bandwidth == 102e9


def test_receiver_alone():
    m = two_party(0.2)
    m.actors["tx"].active = False
    assert m.achieved_bandwidth("rx") == 5e9


def test_calibration_point_slowdown():
    m = two_party(0.2, rx_demand=7e9)
    assert m.achieved_bandwidth("rx") == pytest.approx(0.9 * 7e9)


def test_proportional_scaling():
    m = MemorySystemModel(10e9, default_slowdown_curve())
    m.add_actor(ActorProfile("a", 6e9, role="background"))
    m.add_actor(ActorProfile("b", 6e9, role="background"))
    r = m.rates(["a", "b"])
    assert r["a"] == pytest.approx(5e9) and r["b"] == pytest.approx(5e9)
    assert brute_force_feasible(r, {"a": 6e9, "b": 6e9}, 10e9)


def test_unknown_actor():
    with pytest.raises(UnknownActor):
        two_party(0.2).achieved_bandwidth("nobody")


def test_step_noiseless_is_constant():
    m = two_party(0.2)
    readings = [m.step(1e-3) for _ in range(10)]
    assert all(r == readings[0] for r in readings)


def test_step_replay_with_seed():
    def run():
        m = two_party(0.2)
        m.noise = NoiseModel(gaussian_sigma=0.05, outlier_probability=0.01, outlier_magnitude=0.3, seed=9, interval=1e-4)
        return [m.step(1e-4) for _ in range(50)]

    assert run() == run()


def test_outliers_always():
    m = MemorySystemModel(10e9, default_slowdown_curve(), NoiseModel(outlier_probability=1.0, outlier_magnitude=0.5, interval=1e-4))
    m.add_actor(ActorProfile("rx", 4e9, role="receiver"))
    for _ in range(5):
        assert m.step(1e-4)["rx"] == pytest.approx(2e9)


def test_noise_validation():
    with pytest.raises(ConfigError):
        NoiseModel(gaussian_sigma=-0.1)
    with pytest.raises(ConfigError):
        NoiseModel(outlier_probability=1.5)
    with pytest.raises(ConfigError):
        ActorProfile("x", -1.0)


def test_gpu_receiver_factor():
    assert 3 <= gpu_receiver().demand_bandwidth / cpu_receiver().demand_bandwidth <= 5


def test_presets_build():
    assert noiseless().noiseless
    assert not orin_agx_like().noiseless
    assert orin_agx_like().total_bandwidth == pytest.approx(204.8e9)


@given(st.floats(0, 0.9), st.floats(0, 0.9))
def test_monotone_in_transmitter_utilization(u1, u2):
    lo, hi = sorted((u1, u2))
    assert two_party(hi).achieved_bandwidth("rx") <= two_party(lo).achieved_bandwidth("rx")


def test_noiseless_separation_at_twenty_percent():
    for size in (2 * MiB, 8 * MiB, 64 * MiB):
        m = default_calibration(size)
        busy = m.achieved_bandwidth("receiver")
        m.actors["transmitter"].active = False
        idle = m.achieved_bandwidth("receiver")
        assert busy < idle


demands = st.lists(st.floats(0, 100e9), min_size=1, max_size=6)


@given(demands, st.integers(0, 2**16), st.floats(1e9, 200e9))
def test_conservation(ds, seed, total):
    m = MemorySystemModel(total, default_slowdown_curve(), NoiseModel(gaussian_sigma=0.1, outlier_probability=0.1, outlier_magnitude=0.5, seed=seed))
    roles = ["receiver", "transmitter", "background"]
    for i, d in enumerate(ds):
        m.add_actor(ActorProfile(f"a{i}", d, role=roles[i % 3]))
    slot = seed % 50
    r = m.rates(list(m.actors), slot)
    ceilings = {n: m.actors[n].demand_bandwidth * m.noise_factor(n, slot) for n in r}
    assert brute_force_feasible(r, ceilings, total)
