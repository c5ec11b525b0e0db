from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mc3.chanmodel import default_calibration
from mc3.config import SweepSpec, scenario_preset
from mc3.errors import DomainError, EmptyTrace, SchemaVersionError
from mc3.evaluation import (
    analyze_trace,
    capacity_vs_tx_buffer,
    channel_capacity,
    export_trace,
    hello_world,
    import_trace,
    run_experiment,
    run_sweep,
    write_sweep_outputs,
)
from mc3.txrx import EpochSample, decode_trace
from mc3.units import MiB

from oracles import capacity

pos = st.floats(1e-9, 1e6, allow_nan=False, allow_infinity=False)


def test_capacity_examples():
    assert channel_capacity(1e-3, 0.10) == pytest.approx(10_000)
    assert channel_capacity(2e-3, 0.1) == pytest.approx(channel_capacity(1e-3, 0.1) / 2)
    with pytest.raises(DomainError):
        channel_capacity(0, 0.1)
    with pytest.raises(DomainError):
        channel_capacity(1e-3, -0.1)


@given(pos, pos)
def test_capacity_matches_reference(t, s):
    assert channel_capacity(t, s) == pytest.approx(float(capacity(t, s)), rel=1e-15)


@given(pos, pos, st.floats(1.001, 1000))
def test_capacity_scale_covariance(t, s, k):
    assert channel_capacity(k * t, s) == pytest.approx(channel_capacity(t, s) / k, rel=1e-12)


def test_capacity_vs_buffer_decreasing():
    sizes = [MiB * 2**i for i in range(0, 8)]
    caps = [c for _, c in capacity_vs_tx_buffer(default_calibration(), sizes)]
    assert all(b - a <= 0 for a, b in zip(caps, caps[1:]))
    with pytest.raises(DomainError):
        capacity_vs_tx_buffer(default_calibration(), [MiB // 2])


def test_noiseless_experiment_report():
    report, result = run_experiment(scenario_preset("noiseless"))
    assert report.accuracy == 1.0 and report.ber == 0.0
    assert report.bits_sent == 1024 == report.bits_correct
    assert report.accuracy + report.ber == 1.0
    assert report.channel_capacity * report.elapsed == pytest.approx(report.bits_sent, rel=1e-12)
    assert report.time_kind == "virtual"
    assert report.mean_slowdown == pytest.approx(0.10, abs=0.002)
    assert report.config["epochs_per_bit"] == 1


@given(st.integers(0, 10_000), st.integers(1, 10_000))
def test_accuracy_plus_ber_is_one(errors, extra):
    n = errors + extra
    ber = errors / n
    assert (1.0 - ber) + ber == 1.0


def test_hello_world_noiseless():
    sc = replace(scenario_preset("noiseless"), channel=replace(scenario_preset("noiseless").channel))
    res = hello_world(800, sc)
    assert res.report.accuracy == 1.0
    assert res.text_received == res.text_sent
    assert res.text_sent.startswith(b"Hello, World")
    assert len(res.rolling_average) == len(res.samples)


def test_hello_world_empty():
    res = hello_world(0, scenario_preset("noiseless"))
    assert res.report.accuracy == 1.0 and res.rolling_average == []


def test_trace_round_trip(tmp_path):
    _, result = run_experiment(scenario_preset("orin-agx-like@mid"))
    samples = result.samples[:1000]
    assert len(samples) == 1000
    path = tmp_path / "t.trace"
    export_trace(samples, path)
    assert import_trace(path) == samples


def test_trace_wrong_version(tmp_path):
    p = tmp_path / "t.trace"
    p.write_text("mc3-trace v2\n0 0 1 1 0 0\n")
    with pytest.raises(SchemaVersionError):
        import_trace(p)


def test_hand_written_trace(tmp_path):
    p = tmp_path / "hand.trace"
    p.write_text(
        "mc3-trace v1\n"
        "# index timestamp_us raw_bw_bytes_per_s running_avg normalized baseline_flag\n"
        "0 10.0 100.0 100.0 0.0 1\n"
        "1 20.0 90.0 95.0 -5.0 0\n"
        "2 30.0 100.0 96.66 3.34 0\n"
        "3 40.0 96.0 96.5 -0.5 0\n"
    )
    samples = import_trace(p)
    assert str(decode_trace(samples, 1.0)) == "100"
    bits, g = analyze_trace(samples, 1.0, "paper_verbatim", 1)
    assert str(bits) == "101" and g == 1.0
    with pytest.raises(EmptyTrace):
        analyze_trace([], 1.0, "standard_hysteresis", 1)


def test_sweep_keyed_rows_and_outputs(tmp_path):
    spec = SweepSpec("epochs_per_bit", [1, 2], repetitions=2, scenario=replace(scenario_preset("noiseless"), pattern="balanced:64"))
    result = run_sweep(spec)
    assert [(r.point, r.repetition) for r in result.rows] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    agg = result.aggregate()
    assert agg[0]["accuracy_mean"] == 1.0
    # measured time includes the last window's sub-chunk overshoot
    assert agg[1]["capacity_mean"] == pytest.approx(agg[0]["capacity_mean"] / 2, rel=1e-4)
    files = write_sweep_outputs(result, tmp_path)
    table = files[0].read_text().splitlines()
    assert table[0].split("\t")[:3] == ["point", "parameter", "value"]
    assert len(table) == 5


def test_sweep_parallel_matches_serial():
    sc = replace(scenario_preset("orin-nx-default"), pattern="balanced:64")
    spec = SweepSpec("noise_sigma", [0.0, 0.02], repetitions=2, scenario=sc)
    serial = run_sweep(spec, workers=1)
    parallel = run_sweep(spec, workers=2)
    assert [r.report.accuracy for r in serial.rows] == [r.report.accuracy for r in parallel.rows]


def test_sweep_preserves_partial_failures():
    sc = replace(scenario_preset("noiseless"), pattern="balanced:32")
    spec = SweepSpec("tx_buffer_size", [2 * MiB, 0], scenario=sc)
    result = run_sweep(spec)
    assert result.rows[0].report is not None
    assert result.rows[1].report is None and "ConfigError" in result.rows[1].error


def test_sweep_noise_sigma_from_zero():
    sc = replace(scenario_preset("orin-nx-default"), pattern="balanced:256")
    result = run_sweep(SweepSpec("noise_sigma", [0.0, 0.02, 0.05], scenario=sc))
    acc = [a["accuracy_mean"] for a in result.aggregate()]
    assert acc[0] == 1.0
    assert acc[0] >= acc[1] >= acc[2]


def test_fig5_sweep_shape():
    base = replace(scenario_preset("noiseless"), pattern="balanced:128")
    T = base.channel.epoch_interval
    r1 = run_sweep(SweepSpec("skew", [0.0, 0.4 * T], scenario=base)).aggregate()
    r3 = run_sweep(SweepSpec("skew", [0.0, 0.4 * T], scenario=replace(base, channel=replace(base.channel, epochs_per_bit=3)))).aggregate()
    assert r1[0]["accuracy_mean"] == 1.0 and r1[1]["accuracy_mean"] < 1.0
    assert r3[0]["accuracy_mean"] == 1.0 and r3[1]["accuracy_mean"] == 1.0


def test_epoch_sample_fields():
    s = EpochSample(0, 1.0, 1.0, 0.0, 5.0)
    assert s.baseline is False
