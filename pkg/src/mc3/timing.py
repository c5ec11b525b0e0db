"""Precise sleeping and fixed-duration contention scheduling.

Protocol code (calibration, ``contend_for``, the transmitter and receiver
loops) is written as generators that yield small request objects:
:class:`Copy`, :class:`SleepUntil` and :data:`NOW`. A driver decides what a
request means. :func:`drive` executes them against a kernel and a timer,
blocking in real time for the native backend or advancing a virtual clock
for a stand-alone simulated kernel; :class:`mc3.sim.Simulator` interleaves
several generators on one shared virtual clock.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Any, Generator, Sequence

from .errors import CalibrationFailure, ClockUnavailable

DEFAULT_SPIN_THRESHOLD = 500e-6
DEFAULT_COARSE_FRACTION = 1 / 100
DEFAULT_FINE_FRACTION = 1 / 1000
DEFAULT_REFINE_FRACTION = 0.05


class Copy:
    """Request: stream ``nbytes`` through the actor's kernel."""

    __slots__ = ("nbytes",)

    def __init__(self, nbytes: int):
        self.nbytes = nbytes

    def __repr__(self) -> str:
        return f"Copy({self.nbytes})"


class SleepUntil:
    """Request: stay idle until the actor's clock reads ``deadline`` seconds."""

    __slots__ = ("deadline",)

    def __init__(self, deadline: float):
        self.deadline = deadline

    def __repr__(self) -> str:
        return f"SleepUntil({self.deadline!r})"


class _Now:
    __slots__ = ()

    def __repr__(self) -> str:
        return "NOW"


NOW = _Now()

Proc = Generator[Any, Any, Any]


@dataclass(frozen=True)
class TimerStats:
    """Outcome of one timed operation. ``error_ns`` is achieved minus requested."""

    requested_us: float
    achieved_us: float
    error_ns: float
    samples: int = 1

    @classmethod
    def from_seconds(cls, requested: float, achieved: float, samples: int = 1) -> TimerStats:
        return cls(requested * 1e6, achieved * 1e6, (achieved - requested) * 1e9, samples)


@dataclass(frozen=True)
class ErrorSummary:
    """Mean/min/max/stddev of timing errors in nanoseconds (Table-II layout)."""

    operation: str
    expected_us: float
    mean_ns: float
    min_ns: float
    max_ns: float
    stddev_ns: float
    trials: int

    @classmethod
    def of(cls, operation: str, stats: Sequence[TimerStats]) -> ErrorSummary:
        if not stats:
            raise ValueError("no timing samples to summarise")
        errs = [s.error_ns for s in stats]
        return cls(
            operation,
            stats[0].requested_us,
            statistics.fmean(errs),
            min(errs),
            max(errs),
            statistics.pstdev(errs) if len(errs) > 1 else 0.0,
            len(errs),
        )

    @classmethod
    def of_magnitudes(cls, operation: str, stats: Sequence[TimerStats]) -> ErrorSummary:
        """Summary over ``|error|``, matching how contention errors are usually quoted."""
        flipped = [TimerStats(s.requested_us, s.achieved_us, abs(s.error_ns), s.samples) for s in stats]
        return cls.of(operation, flipped)


def format_error_table(rows: Sequence[ErrorSummary]) -> str:
    header = f"{'Operation':<12}{'Expected':>12}{'Mean Error':>16}{'Min Error':>16}{'Max Error':>16}{'Std.dev. Error':>18}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.operation:<12}{_fmt_us(r.expected_us):>12}{_fmt_ns(r.mean_ns):>16}"
            f"{_fmt_ns(r.min_ns):>16}{_fmt_ns(r.max_ns):>16}{_fmt_ns(r.stddev_ns):>18}"
        )
    return "\n".join(lines)


def _fmt_ns(ns: float) -> str:
    if abs(ns) >= 1e6:
        return f"{ns / 1e6:.3f} ms"
    if abs(ns) >= 1e3:
        return f"{ns / 1e3:.3f} us"
    return f"{round(ns) + 0:d} ns"


def _fmt_us(us: float) -> str:
    return f"{us / 1e3:g} ms" if us >= 1e3 else f"{us:g} us"


def check_monotonic_clock() -> None:
    info = time.get_clock_info("perf_counter")
    if not info.monotonic:
        raise ClockUnavailable("perf_counter is not monotonic on this platform")


def precise_sleep(duration: float, spin_threshold: float = DEFAULT_SPIN_THRESHOLD) -> TimerStats:
    """Sleep for ``duration`` seconds, never returning early.

    The OS sleep covers everything except the last ``spin_threshold``
    seconds, which are busy-waited on the monotonic nanosecond clock.
    """
    check_monotonic_clock()
    if duration < 0:
        raise ValueError("duration must be non-negative")
    requested_ns = math.ceil(duration * 1e9)
    start = time.perf_counter_ns()
    deadline = start + requested_ns
    end = _sleep_until_ns(deadline, int(spin_threshold * 1e9))
    return TimerStats(requested_ns / 1e3, (end - start) / 1e3, float(end - start - requested_ns))


def _sleep_until_ns(deadline: int, spin_ns: int) -> int:
    """Block until ``deadline`` and return the first clock reading at or past it."""
    clock = time.perf_counter_ns
    remaining = deadline - clock()
    if remaining > spin_ns:
        time.sleep((remaining - spin_ns) / 1e9)
    while True:
        t = clock()
        if t >= deadline:
            return t


class PreciseTimer:
    """Real-time timer on ``perf_counter``; the native counterpart of ``VirtualTimer``."""

    virtual = False

    def __init__(self, spin_threshold: float = DEFAULT_SPIN_THRESHOLD):
        check_monotonic_clock()
        self.spin_threshold = spin_threshold

    def now(self) -> float:
        return time.perf_counter()

    def sleep_until(self, deadline: float) -> float:
        remaining = deadline - time.perf_counter()
        if remaining > self.spin_threshold:
            time.sleep(remaining - self.spin_threshold)
        while True:
            t = time.perf_counter()
            if t >= deadline:
                return t

    def sleep_for(self, duration: float) -> TimerStats:
        return precise_sleep(duration, self.spin_threshold)


def drive(proc: Proc, kernel, timer) -> Any:
    """Run a protocol generator to completion against ``kernel`` and ``timer``."""
    result = None
    try:
        while True:
            req = proc.send(result)
            if isinstance(req, Copy):
                result = kernel.copy_buffer(req.nbytes)
            elif isinstance(req, SleepUntil):
                result = timer.sleep_until(req.deadline)
            elif req is NOW:
                result = timer.now()
            else:
                raise TypeError(f"unknown request {req!r}")
    except StopIteration as stop:
        return stop.value


@dataclass(frozen=True)
class ContendForPlan:
    """Chunking plan for one contention window, all sizes in bytes."""

    total_duration: float
    calibration_bandwidth: float
    total_data_estimate: float
    coarse_chunk: int
    fine_chunk: int
    refine_threshold: float


@dataclass
class ContendResult:
    bandwidth: float
    bytes_moved: int
    stats: TimerStats
    coarse_chunks: int
    fine_chunks: int
    last_chunk: str
    last_fine_chunk: int
    start: float
    end: float
    chunk_log: list[tuple[str, int, float]] = field(default_factory=list, repr=False)

    @property
    def chunks(self) -> int:
        return self.coarse_chunks + self.fine_chunks


class Contender:
    """Adaptive ``contend_for`` scheduler for one actor.

    Holds the running bandwidth estimate between windows. Each window sizes
    its total data as ``bandwidth * T``, streams it in coarse chunks, and
    switches to fine chunks once less than ``refine_fraction * T`` remains.
    It stops when the time left is under half a fine chunk, so the window
    ends within one fine chunk of its deadline.
    """

    def __init__(
        self,
        bandwidth: float | None = None,
        coarse_fraction: float = DEFAULT_COARSE_FRACTION,
        fine_fraction: float = DEFAULT_FINE_FRACTION,
        refine_fraction: float = DEFAULT_REFINE_FRACTION,
        alignment: int = 64,
        record_chunks: bool = False,
    ):
        if not 0 < fine_fraction <= coarse_fraction <= 1:
            raise ValueError("need 0 < fine_fraction <= coarse_fraction <= 1")
        self.bandwidth = bandwidth
        self.calibration_bandwidth = bandwidth
        self.coarse_fraction = coarse_fraction
        self.fine_fraction = fine_fraction
        self.refine_fraction = refine_fraction
        self.alignment = alignment
        self.record_chunks = record_chunks

    def _align(self, nbytes: float) -> int:
        a = self.alignment
        return max(a, int(nbytes // a) * a)

    def plan(self, duration: float) -> ContendForPlan:
        if not self.bandwidth:
            raise CalibrationFailure("contender has no bandwidth estimate; calibrate first")
        d_star = self.bandwidth * duration
        return ContendForPlan(
            duration,
            self.calibration_bandwidth or self.bandwidth,
            d_star,
            self._align(d_star * self.coarse_fraction),
            self._align(d_star * self.fine_fraction),
            self.refine_fraction * duration,
        )

    def calibrate(self, warmup: float, chunk_bytes: int) -> Proc:
        """Generator: stream ``chunk_bytes`` copies for ``warmup`` seconds, set β₀."""
        beta = yield from calibrate_proc(warmup, chunk_bytes)
        self.bandwidth = self.calibration_bandwidth = beta
        return beta

    def contend_until(self, deadline: float, start: float | None = None) -> Proc:
        """Generator: keep the kernel busy until ``deadline`` on the actor's clock."""
        if start is None:
            start = yield NOW
        duration = deadline - start
        if not self.bandwidth:
            raise CalibrationFailure("contender has no bandwidth estimate; calibrate first")
        beta = self.bandwidth
        refine_at = self.refine_fraction * duration
        coarse_frac, fine_frac = self.coarse_fraction, self.fine_fraction
        align = self.alignment
        now = start
        moved = 0
        n_coarse = n_fine = 0
        last = "none"
        fine = align
        log = [] if self.record_chunks else None
        while True:
            remaining = deadline - now
            d_star = beta * duration
            fine = max(align, int(d_star * fine_frac) // align * align)
            if remaining > refine_at:
                chunk = max(align, int(d_star * coarse_frac) // align * align)
                if chunk > beta * remaining:
                    chunk = fine
                    kind = "fine"
                else:
                    kind = "coarse"
            else:
                # stop once the next fine chunk would overshoot by more than we undershoot
                if moved and fine > 2 * beta * remaining:
                    break
                chunk = fine
                kind = "fine"
            sample = yield Copy(chunk)
            moved += sample.bytes_moved
            now = sample.timestamp
            if sample.duration > 0:
                beta = sample.bandwidth
            if kind == "coarse":
                n_coarse += 1
            else:
                n_fine += 1
            last = kind
            if log is not None:
                log.append((kind, chunk, remaining))
            if now >= deadline and moved:
                break
        self.bandwidth = beta
        elapsed = now - start
        bandwidth = moved / elapsed if elapsed > 0 else 0.0
        return ContendResult(
            bandwidth,
            moved,
            TimerStats.from_seconds(duration, elapsed),
            n_coarse,
            n_fine,
            last,
            fine,
            start,
            now,
            log or [],
        )

    def contend_for(self, duration: float) -> Proc:
        start = yield NOW
        return (yield from self.contend_until(start + duration, start))


def calibrate_proc(warmup: float, chunk_bytes: int) -> Proc:
    """Generator: mean per-copy bandwidth over at least ``warmup`` seconds."""
    if warmup <= 0:
        raise ValueError("warmup_duration must be positive")
    if chunk_bytes <= 0:
        raise ValueError("calibration chunk must be positive")
    start = yield NOW
    readings = []
    now = start
    while now - start < warmup or not readings:
        sample = yield Copy(chunk_bytes)
        now = sample.timestamp
        if sample.duration > 0:
            readings.append(sample.bandwidth)
        elif len(readings) == 0 and now - start > 10 * warmup:
            break
    if not readings or statistics.fmean(readings) <= 0:
        raise CalibrationFailure("could not measure a positive bandwidth")
    return statistics.fmean(readings)


def calibrate(kernel, warmup_duration: float, timer=None, chunk_bytes: int | None = None) -> float:
    """Measure the currently achievable contention bandwidth β₀ in bytes/s."""
    timer = timer if timer is not None else kernel.timer
    chunk = chunk_bytes or kernel.config.buffer_size
    return drive(calibrate_proc(warmup_duration, chunk), kernel, timer)


def contend_for(
    duration: float,
    kernel,
    timer=None,
    contender: Contender | None = None,
    warmup_duration: float = 1.0,
) -> ContendResult:
    """Drive ``kernel`` nearly continuously for ``duration`` seconds.

    Returns the achieved bandwidth with the window's timing error. When no
    pre-calibrated ``contender`` is passed, one is calibrated first.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    timer = timer if timer is not None else kernel.timer
    if contender is None:
        contender = Contender(alignment=kernel.config.alignment)
    if not contender.bandwidth:
        contender.bandwidth = contender.calibration_bandwidth = calibrate(kernel, warmup_duration, timer)
    return drive(contender.contend_for(duration), kernel, timer)
