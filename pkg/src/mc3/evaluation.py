"""Experiment harness: reports, the analytical capacity model, sweeps and trace files."""
from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .bitstream import Bitstream, bit_error_rate, decode_text, encode_text
from .chanmodel import MemorySystemModel
from .config import Scenario, SweepSpec, apply_sweep_value
from .errors import DomainError, EmptyTrace, SchemaVersionError
from .txrx import EpochSample, SessionResult, run_session

TRACE_HEADER = "mc3-trace v1"
TRACE_COLUMNS = ("index", "timestamp_us", "raw_bw_bytes_per_s", "running_avg", "normalized", "baseline_flag")
HELLO_TEXT = "Hello, World! "


@dataclass
class TransmissionReport:
    bits_sent: int
    bits_correct: int
    accuracy: float
    ber: float
    channel_capacity: float
    mean_slowdown: float
    elapsed: float
    time_kind: str
    gamma: float = 0.0
    scenario: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)

    @classmethod
    def from_session(cls, result: SessionResult, scenario: str = "", seed: int = 0) -> TransmissionReport:
        n = len(result.sent)
        ber = bit_error_rate(result.sent, result.received) if n else 0.0
        correct = n - round(ber * n)
        capacity = n / result.elapsed if n and result.elapsed > 0 else 0.0
        return cls(
            bits_sent=n,
            bits_correct=correct,
            accuracy=1.0 - ber,
            ber=ber,
            channel_capacity=capacity,
            mean_slowdown=measured_slowdown(result),
            elapsed=result.elapsed,
            time_kind=result.time_kind,
            gamma=result.gamma,
            scenario=scenario,
            seed=seed,
        )

    def summary(self) -> str:
        unit = "virtual" if self.time_kind == "virtual" else "wall-clock"
        return (
            f"bits={self.bits_sent} correct={self.bits_correct} accuracy={self.accuracy:.6f} ber={self.ber:.6f} "
            f"capacity={self.channel_capacity:.1f} bit/s ({unit}) slowdown={self.mean_slowdown:.4f} "
            f"gamma={self.gamma:.6g} elapsed={self.elapsed:.6f}s"
        )


def measured_slowdown(result: SessionResult) -> float:
    """1 - mean receiver bandwidth while 1s were sent / mean while 0s were sent.

    Returns 0 when either symbol is missing from the message.
    """
    epochs = [s for s in result.samples if not s.baseline]
    n = len(result.sent)
    if not n or len(epochs) < n:
        return 0.0
    per_bit = len(epochs) // n
    ones = [s.raw_bandwidth for k, s in enumerate(epochs[: n * per_bit]) if result.sent[k // per_bit]]
    zeros = [s.raw_bandwidth for k, s in enumerate(epochs[: n * per_bit]) if not result.sent[k // per_bit]]
    if not ones or not zeros:
        return 0.0
    base = statistics.fmean(zeros)
    return 1.0 - statistics.fmean(ones) / base if base > 0 else 0.0


# -- analytical capacity ---------------------------------------------------------

def channel_capacity(time_tx: float, slowdown_rec: float) -> float:
    """Analytical capacity 1 / (time_tx * slowdown_rec).

    ``time_tx`` is the transmitter's time per bit in seconds and
    ``slowdown_rec`` the receiver's fractional slowdown, so the result is in
    bits per second scaled by the inverse slowdown.
    """
    if not time_tx > 0 or not slowdown_rec > 0:
        raise DomainError("channel capacity needs time_tx > 0 and slowdown_rec > 0")
    return 1.0 / (time_tx * slowdown_rec)


def capacity_vs_tx_buffer(model: MemorySystemModel, sizes: Iterable[int]) -> list[tuple[int, float]]:
    """Model capacity for each transmitter buffer size.

    One pass over the buffer takes ``size / (u(size) * total)``; the
    receiver slowdown is read off the model's slowdown curve at ``u(size)``.
    """
    out = []
    for size in sizes:
        u = model.utilization_for_buffer(size)
        if u <= 0:
            raise DomainError(f"buffer {size} produces no memory-controller utilisation")
        time_tx = size / (u * model.total_bandwidth)
        out.append((size, channel_capacity(time_tx, model.slowdown(u))))
    return out


# -- experiments ------------------------------------------------------------------

def run_scenario_session(sc: Scenario) -> SessionResult:
    bits = sc.bits()
    if sc.backend == "native":
        return run_session(bits, sc.channel, native=True)
    return run_session(bits, sc.channel, sc.build_model(), skew=sc.skew)


def run_experiment(sc: Scenario) -> tuple[TransmissionReport, SessionResult]:
    result = run_scenario_session(sc)
    report = TransmissionReport.from_session(result, sc.name, sc.seed)
    report.config = sc.channel.as_dict()
    return report, result


@dataclass
class SweepRow:
    point: int
    value: object
    repetition: int
    seed: int
    report: TransmissionReport | None
    error: str = ""


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[SweepRow]

    def points(self) -> list[tuple[object, list[TransmissionReport]]]:
        grouped: dict[int, tuple[object, list]] = {}
        for row in self.rows:
            entry = grouped.setdefault(row.point, (row.value, []))
            if row.report is not None:
                entry[1].append(row.report)
        return [grouped[k] for k in sorted(grouped)]

    def aggregate(self) -> list[dict]:
        """Mean and standard deviation of accuracy and capacity per sweep point."""
        out = []
        for value, reports in self.points():
            acc = [r.accuracy for r in reports]
            cap = [r.channel_capacity for r in reports]
            out.append(
                {
                    "value": value,
                    "runs": len(reports),
                    "accuracy_mean": statistics.fmean(acc) if acc else math.nan,
                    "accuracy_std": statistics.pstdev(acc) if len(acc) > 1 else 0.0,
                    "capacity_mean": statistics.fmean(cap) if cap else math.nan,
                    "capacity_std": statistics.pstdev(cap) if len(cap) > 1 else 0.0,
                }
            )
        return out


def _sweep_task(args) -> SweepRow:
    point, value, rep, seed, sc, parameter = args
    try:
        trial = apply_sweep_value(sc.with_seed(seed), parameter, value)
        report, _ = run_experiment(trial)
        return SweepRow(point, value, rep, seed, report)
    except Exception as exc:  # keep the rest of the sweep
        return SweepRow(point, value, rep, seed, None, f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """One report per (value, repetition); repetition ``k`` uses seed ``base + k``.

    Failed points are recorded with their error and do not stop the sweep.
    Rows are ordered by point and repetition whatever order they finish in.
    """
    from .config import scenario_preset

    sc = spec.scenario or scenario_preset("noiseless")
    tasks = [
        (i, v, rep, sc.seed + rep, sc, spec.parameter)
        for i, v in enumerate(spec.values)
        for rep in range(spec.repetitions)
    ]
    workers = workers or spec.workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: (r.point, r.repetition))
    return SweepResult(spec, rows)


@dataclass
class HelloWorldResult:
    report: TransmissionReport
    text_sent: bytes
    text_received: bytes
    error_free_prefix: int
    rolling_average: list[tuple[float, float]]
    samples: list[EpochSample]


def hello_message(message_bits: int) -> bytes:
    n = message_bits // 8
    return (HELLO_TEXT * (n // len(HELLO_TEXT) + 1)).encode()[:n]


def hello_world(message_bits: int, sc: Scenario) -> HelloWorldResult:
    """Send a repeated greeting of ``message_bits`` bits (rounded down to bytes)."""
    text = hello_message(message_bits)
    bits = encode_text(text)
    if not bits:
        report = TransmissionReport(0, 0, 1.0, 0.0, 0.0, 0.0, 0.0, "virtual" if sc.backend == "sim" else "wall", scenario=sc.name, seed=sc.seed)
        return HelloWorldResult(report, b"", b"", 0, [], [])
    if sc.backend == "native":
        result = run_session(bits, sc.channel, native=True)
    else:
        result = run_session(bits, sc.channel, sc.build_model(), skew=sc.skew)
    report = TransmissionReport.from_session(result, sc.name, sc.seed)
    report.config = sc.channel.as_dict()
    received = decode_text(result.received[: len(result.received) // 8 * 8])
    prefix = 0
    for a, b in zip(text, received):
        if a != b:
            break
        prefix += 1
    rolling = [(s.timestamp_us, s.running_average) for s in result.samples]
    return HelloWorldResult(report, text, received, prefix, rolling, result.samples)


# -- files ------------------------------------------------------------------------

def format_trace(samples: Sequence[EpochSample]) -> str:
    lines = [TRACE_HEADER, "# " + " ".join(TRACE_COLUMNS)]
    for s in samples:
        lines.append(
            f"{s.index} {s.timestamp_us!r} {s.raw_bandwidth!r} {s.running_average!r} {s.normalized!r} {int(s.baseline)}"
        )
    return "\n".join(lines) + "\n"


def export_trace(samples: Sequence[EpochSample], path: str | Path) -> None:
    Path(path).write_text(format_trace(samples))


def parse_trace(text: str, source: str = "<trace>") -> list[EpochSample]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRACE_HEADER:
        found = lines[0].strip() if lines else ""
        raise SchemaVersionError(f"{source}: expected header {TRACE_HEADER!r}, found {found!r}")
    samples = []
    for n, line in enumerate(lines[1:], 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != len(TRACE_COLUMNS):
            raise ValueError(f"{source}:{n}: expected {len(TRACE_COLUMNS)} columns, got {len(parts)}")
        samples.append(
            EpochSample(
                index=int(parts[0]),
                raw_bandwidth=float(parts[2]),
                running_average=float(parts[3]),
                normalized=float(parts[4]),
                timestamp_us=float(parts[1]),
                baseline=parts[5] == "1",
            )
        )
    return samples


def import_trace(path: str | Path) -> list[EpochSample]:
    return parse_trace(Path(path).read_text(), str(path))


RESULT_COLUMNS = (
    "point", "parameter", "value", "repetition", "seed", "bits_sent", "bits_correct", "accuracy", "ber",
    "capacity_bps", "mean_slowdown", "elapsed_s", "time_kind", "gamma", "error",
)


def format_results_table(result: SweepResult) -> str:
    """Tab-separated table, one row per (point, repetition)."""
    lines = ["\t".join(RESULT_COLUMNS)]
    for row in result.rows:
        r = row.report
        cells = [row.point, result.spec.parameter, row.value, row.repetition, row.seed]
        if r is None:
            cells += [""] * 9 + [row.error]
        else:
            cells += [
                r.bits_sent, r.bits_correct, repr(r.accuracy), repr(r.ber), repr(r.channel_capacity),
                repr(r.mean_slowdown), repr(r.elapsed), r.time_kind, repr(r.gamma), "",
            ]
        lines.append("\t".join(str(c) for c in cells))
    return "\n".join(lines) + "\n"


def format_xy(points: Iterable[tuple[float, float]], x_label: str, y_label: str) -> str:
    lines = [f"# {x_label} {y_label}"]
    lines += [f"{x!r} {y!r}" for x, y in points]
    return "\n".join(lines) + "\n"


def write_sweep_outputs(result: SweepResult, out_dir: str | Path, stem: str = "sweep") -> list[Path]:
    """Write the results table plus value-vs-accuracy and capacity-vs-accuracy series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg = result.aggregate()
    param = result.spec.parameter
    files = {
        out / f"{stem}_results.tsv": format_results_table(result),
        out / f"{stem}_{param}_accuracy.dat": format_xy(
            [(float(a["value"]), a["accuracy_mean"]) for a in agg], param, "accuracy"
        ),
        out / f"{stem}_{param}_capacity.dat": format_xy(
            [(float(a["value"]), a["capacity_mean"]) for a in agg], param, "capacity_bps"
        ),
        out / f"{stem}_accuracy_vs_capacity.dat": format_xy(
            [(a["capacity_mean"], a["accuracy_mean"]) for a in agg], "capacity_bps", "accuracy"
        ),
    }
    for path, text in files.items():
        path.write_text(text)
    return list(files)


def analyze_trace(samples: Sequence[EpochSample], gamma: float | None, mode: str, epochs_per_bit: int, gamma_factor: float = 2.0) -> tuple[Bitstream, float]:
    """Re-decode a stored trace; ``gamma=None`` derives it from the baseline epochs."""
    from .txrx import ChannelConfig, decode_trace, resolve_gamma

    if not samples:
        raise EmptyTrace("trace has no samples")
    cfg = ChannelConfig(epoch_interval=1.0, hysteresis_threshold=gamma, gamma_factor=gamma_factor)
    g = resolve_gamma(samples, cfg)
    return decode_trace(samples, g, mode, epochs_per_bit), g
