from __future__ import annotations

import pytest

from mc3.chanmodel import ActorProfile, MemorySystemModel, NoiseModel, default_slowdown_curve
from mc3.errors import KernelFailure
from mc3.sim import Simulator, VirtualTimer
from mc3.timing import NOW, Copy, SleepUntil


def model(**noise):
    m = MemorySystemModel(100e9, default_slowdown_curve(), NoiseModel(**noise))
    m.add_actor(ActorProfile("tx", 20e9, role="transmitter"))
    m.add_actor(ActorProfile("rx", 10e9, role="receiver"))
    return m


def copier(n, size):
    out = []
    for _ in range(n):
        s = yield Copy(size)
        out.append(s)
    return out


def test_single_copy_duration():
    sim = Simulator(model())
    s = sim.run_single("rx", Copy(10_000_000))
    assert s.duration == pytest.approx(1e-3)
    assert sim.now == pytest.approx(1e-3)


def test_concurrent_copy_slows_receiver():
    sim = Simulator(model())
    rx = sim.spawn("rx", copier(1, 10_000_000))
    sim.spawn("tx", copier(10, 10_000_000))
    sim.run()
    assert rx.value[0].bandwidth == pytest.approx(9e9)


def test_sleep_and_now_with_offset():
    def proc():
        t0 = yield NOW
        t1 = yield SleepUntil(t0 + 0.5)
        return t0, t1

    sim = Simulator(model())
    p = sim.spawn("rx", proc(), clock_offset=-0.1)
    sim.run()
    assert p.value == (pytest.approx(-0.1), pytest.approx(0.4))
    assert sim.now == pytest.approx(0.5)


def test_virtual_timer():
    sim = Simulator(model())
    timer = VirtualTimer(sim)
    stats = timer.sleep_for(0.25)
    assert stats.error_ns == 0 and timer.now() == pytest.approx(0.25)


def test_stall_detected():
    m = model()
    m.actors["rx"].demand_bandwidth = 0.0
    sim = Simulator(m)
    sim.spawn("rx", copier(1, 100))
    with pytest.raises(KernelFailure):
        sim.run()


def test_noisy_runs_replay():
    def run():
        sim = Simulator(model(gaussian_sigma=0.1, seed=3, interval=1e-4))
        p = sim.spawn("rx", copier(30, 1_000_000))
        sim.spawn("tx", copier(30, 1_000_000))
        sim.run()
        return [s.duration for s in p.value]

    a = run()
    assert a == run()
    assert len(set(a)) > 1


def test_square_wave_background():
    m = model()
    m.add_actor(ActorProfile("bg", 40e9, role="background", square_wave=(2e-3, 0.5)))
    sim = Simulator(m)
    p = sim.spawn("rx", copier(20, 1_000_000))
    sim.run()
    bws = {round(s.bandwidth / 1e9, 3) for s in p.value}
    assert len(bws) > 1
