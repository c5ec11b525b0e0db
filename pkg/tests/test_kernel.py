from __future__ import annotations

import pytest

from mc3.chanmodel import ActorProfile, MemorySystemModel, NoiseModel, SlowdownCurve, default_calibration
from mc3.errors import CacheInflatedReading, CalibrationFailure, ConfigError
from mc3.kernel import KernelConfig, NativeKernel, SimulatedKernel, mc_utilization
from mc3.units import MiB


def one_actor_model(demand, total=10e9, sigma=0.0):
    m = MemorySystemModel(total, SlowdownCurve([(0, 0), (1, 0.5)]), NoiseModel(gaussian_sigma=sigma, seed=2))
    m.add_actor(ActorProfile("a", demand, role="transmitter"))
    return m


def test_config_validation():
    with pytest.raises(ConfigError):
        KernelConfig(0)
    with pytest.raises(ConfigError):
        KernelConfig(1024, alignment=48)


def test_simulated_copy_arithmetic():
    k = SimulatedKernel(one_actor_model(8e9), "a", KernelConfig(MiB))
    s = k.copy_buffer(8_000_000)
    assert s.duration == pytest.approx(1e-3)
    assert s.bandwidth == pytest.approx(8e9)
    assert s.bandwidth == s.bytes_moved / s.duration


def test_simulated_is_deterministic():
    def run():
        k = SimulatedKernel(one_actor_model(8e9, sigma=0.1), "a", KernelConfig(MiB))
        return [k.copy_buffer(MiB) for _ in range(20)]

    assert run() == run()


def test_native_copy_sweeps_buffer():
    k = NativeKernel(KernelConfig(MiB, cache_bypass=False))
    s = k.copy_buffer(2 * MiB)
    assert s.bytes_moved == 2 * MiB
    assert s.duration > 0
    assert s.bandwidth == s.bytes_moved / s.duration
    assert k.metadata["strategy"] == "cached"


def test_native_bandwidth_plausible():
    k = NativeKernel(KernelConfig(64 * MiB), llc_bytes=16 * MiB)
    s = k.copy_buffer(64 * MiB)
    assert 0.5e9 <= s.bandwidth <= 500e9
    assert k.metadata["strategy"] == "llc-sweep"
    assert k.metadata["non_temporal"] is False


def test_native_guard_against_inflated_reading():
    k = NativeKernel(KernelConfig(MiB), peak_bandwidth=1.0, llc_bytes=MiB)
    with pytest.raises(CacheInflatedReading):
        k.copy_buffer(MiB)


def test_native_threads():
    k = NativeKernel(KernelConfig(MiB, cache_bypass=False, threads=2))
    assert k.copy_buffer(3 * MiB).bytes_moved == 3 * MiB
    k.close()


def test_mc_utilization_sim():
    k = SimulatedKernel(one_actor_model(2e9), "a", KernelConfig(MiB))
    assert mc_utilization(k, 0.01) == pytest.approx(0.2)
    k0 = SimulatedKernel(one_actor_model(0.0), "a", KernelConfig(MiB))
    assert mc_utilization(k0, 0.01) == 0.0


def test_mc_utilization_calibration_point():
    model = default_calibration(2 * MiB)
    k = SimulatedKernel(model, "transmitter", KernelConfig(2 * MiB))
    assert mc_utilization(k, 0.01) == pytest.approx(0.20)


def test_mc_utilization_needs_peak():
    k = NativeKernel(KernelConfig(MiB, cache_bypass=False))
    with pytest.raises(CalibrationFailure):
        mc_utilization(k, 0.01)
