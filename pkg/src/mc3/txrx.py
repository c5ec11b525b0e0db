"""Transmitter and receiver engines plus the hysteresis decoder.

Both sides derive every deadline from the shared ``start_epoch`` and the
epoch grid (``start_epoch + k * T``) instead of chaining relative waits, so
per-window timing errors never accumulate into drift.
"""
from __future__ import annotations

import math
import multiprocessing as mp
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .bitstream import Bitstream
from .chanmodel import MemorySystemModel, actors_by_role, apply_buffers
from .errors import ConfigError, EmptyTrace, MissedStartEpoch
from .kernel import KernelConfig, NativeKernel
from .sim import Simulator
from .timing import (
    DEFAULT_COARSE_FRACTION,
    DEFAULT_FINE_FRACTION,
    DEFAULT_REFINE_FRACTION,
    DEFAULT_SPIN_THRESHOLD,
    NOW,
    Contender,
    PreciseTimer,
    Proc,
    SleepUntil,
    drive,
)
from .units import MiB

DECODER_MODES = ("standard_hysteresis", "paper_verbatim")
_MODE_ALIASES = {"standard": "standard_hysteresis", "verbatim": "paper_verbatim", "paper": "paper_verbatim"}


def normalize_mode(mode: str) -> str:
    """Accept the short forms ``standard`` and ``verbatim`` for decoder modes."""
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in DECODER_MODES:
        raise ConfigError(f"decoder mode must be one of {DECODER_MODES}, got {mode!r}")
    return mode


@dataclass
class ChannelConfig:
    """Parameters both endpoints agree on in advance. Times are in seconds."""

    epoch_interval: float
    epochs_per_bit: int = 1
    tx_buffer_size: int = 2 * MiB
    rx_buffer_size: int = 1 * MiB
    hysteresis_threshold: float | None = None
    gamma_factor: float = 2.0
    start_epoch: float | None = None
    rx_early_start: float = 1.0
    decoder_mode: str = "standard_hysteresis"
    calibration_warmup: float = 1.0
    coarse_fraction: float = DEFAULT_COARSE_FRACTION
    fine_fraction: float = DEFAULT_FINE_FRACTION
    refine_fraction: float = DEFAULT_REFINE_FRACTION
    spin_threshold: float = DEFAULT_SPIN_THRESHOLD

    def __post_init__(self) -> None:
        if not self.epoch_interval > 0:
            raise ConfigError("epoch_interval must be positive")
        if int(self.epochs_per_bit) != self.epochs_per_bit or self.epochs_per_bit < 1:
            raise ConfigError("epochs_per_bit must be an integer >= 1")
        self.epochs_per_bit = int(self.epochs_per_bit)
        if self.hysteresis_threshold is not None and self.hysteresis_threshold < 0:
            raise ConfigError("hysteresis threshold must be >= 0")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f"decoder_mode must be one of {DECODER_MODES}")
        if self.rx_early_start < 0:
            raise ConfigError("rx_early_start must be >= 0")
        if self.tx_buffer_size <= 0 or self.rx_buffer_size <= 0:
            raise ConfigError("buffer sizes must be positive")

    @property
    def bit_interval(self) -> float:
        return self.epochs_per_bit * self.epoch_interval

    @property
    def baseline_epochs(self) -> int:
        return math.ceil(self.rx_early_start / self.epoch_interval - 1e-9)

    def contender(self, record_chunks: bool = False) -> Contender:
        return Contender(
            coarse_fraction=self.coarse_fraction,
            fine_fraction=self.fine_fraction,
            refine_fraction=self.refine_fraction,
            record_chunks=record_chunks,
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochSample:
    index: int
    raw_bandwidth: float
    running_average: float
    normalized: float
    timestamp_us: float
    baseline: bool = False


@dataclass(frozen=True)
class TxBit:
    index: int
    bit: int
    start: float
    end: float
    bytes_moved: int
    bandwidth: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class TransmitLog:
    start_epoch: float
    bit_interval: float
    calibration_bandwidth: float | None
    bits: list[TxBit] = field(default_factory=list)

    @property
    def end(self) -> float:
        return self.bits[-1].end if self.bits else self.start_epoch


@dataclass
class DecoderState:
    """Hysteresis memory ``b`` of the decoder; starts at 0."""

    mode: str = "standard_hysteresis"
    b: int = 0

    def __post_init__(self) -> None:
        if self.mode not in DECODER_MODES:
            raise ConfigError(f"decoder mode must be one of {DECODER_MODES}")

    def feed(self, value: float, gamma: float) -> int:
        """Classify one normalised epoch and update ``b``."""
        if value > gamma:
            self.b = 1 if self.mode == "paper_verbatim" else 0
            return 0
        if value < -gamma:
            self.b = 0 if self.mode == "paper_verbatim" else 1
            return 1
        return self.b


class RunningAverage:
    """Global mean kept with the incremental update ``avg = (avg * i + x) / (i + 1)``."""

    def __init__(self) -> None:
        self.count = 0
        self.value = 0.0

    def update(self, x: float) -> float:
        self.value = (self.value * self.count + x) / (self.count + 1)
        self.count += 1
        return self.value


# -- protocol generators ------------------------------------------------------

def transmitter_proc(bits: Sequence[int], cfg: ChannelConfig, contender: Contender, start_epoch: float, calib_chunk: int) -> Proc:
    now = yield NOW
    if now > start_epoch:
        raise MissedStartEpoch(f"start epoch {start_epoch:.6f} already passed (now {now:.6f})")
    if not contender.bandwidth:
        yield from contender.calibrate(cfg.calibration_warmup, calib_chunk)
        now = yield NOW
        if now > start_epoch:
            raise MissedStartEpoch("calibration ran past the start epoch")
    log = TransmitLog(start_epoch, cfg.bit_interval, contender.calibration_bandwidth)
    now = yield SleepUntil(start_epoch)
    interval = cfg.bit_interval
    for i, b in enumerate(bits):
        deadline = start_epoch + (i + 1) * interval
        begin = now
        if b:
            res = yield from contender.contend_until(deadline, begin)
            now = res.end
            log.bits.append(TxBit(i, 1, begin, now, res.bytes_moved, res.bandwidth))
        else:
            now = yield SleepUntil(deadline)
            log.bits.append(TxBit(i, 0, begin, now, 0, 0.0))
    return log


def receiver_proc(n_epochs: int, cfg: ChannelConfig, contender: Contender, start_epoch: float, calib_chunk: int) -> Proc:
    if n_epochs <= 0:
        return []
    T = cfg.epoch_interval
    n_base = cfg.baseline_epochs
    first = start_epoch - n_base * T
    now = yield NOW
    if now > first:
        raise MissedStartEpoch("receiver start (start epoch minus early start) already passed")
    if not contender.bandwidth:
        yield from contender.calibrate(cfg.calibration_warmup, calib_chunk)
        now = yield NOW
        if now > first:
            raise MissedStartEpoch("receiver calibration ran past its start")
    yield SleepUntil(first)
    avg = RunningAverage()
    samples = []
    for i in range(n_base + n_epochs):
        deadline = start_epoch + (i - n_base + 1) * T
        res = yield from contender.contend_until(deadline)
        raw = res.bandwidth
        avg.update(raw)
        samples.append(EpochSample(i, raw, avg.value, raw - avg.value, res.end * 1e6, i < n_base))
    return samples


# -- decoding -----------------------------------------------------------------

def decode_values(normalized: Iterable[float], gamma: float, mode: str = "standard_hysteresis", epochs_per_bit: int = 1) -> Bitstream:
    """Threshold normalised bandwidths with hysteresis and collapse R epochs per bit.

    Each group of ``epochs_per_bit`` symbols becomes one bit by majority vote;
    a tie takes the hysteresis state after the group. A trailing partial
    group is dropped.
    """
    if epochs_per_bit < 1:
        raise ValueError("epochs_per_bit must be >= 1")
    state = DecoderState(mode)
    out = []
    ones = count = 0
    for v in normalized:
        ones += state.feed(v, gamma)
        count += 1
        if count == epochs_per_bit:
            if 2 * ones > count:
                out.append(1)
            elif 2 * ones < count:
                out.append(0)
            else:
                out.append(state.b)
            ones = count = 0
    return Bitstream(tuple(out))


def decode_trace(samples: Sequence[EpochSample], gamma: float, mode: str = "standard_hysteresis", epochs_per_bit: int = 1) -> Bitstream:
    """Decode the non-baseline epochs of a receiver trace."""
    if not samples:
        raise EmptyTrace("no epoch samples to decode")
    return decode_values([s.normalized for s in samples if not s.baseline], gamma, mode, epochs_per_bit)


def resolve_gamma(samples: Sequence[EpochSample], cfg: ChannelConfig) -> float:
    """The configured threshold, or ``gamma_factor`` times the baseline standard deviation.

    The automatic value is floored at ``fine_fraction`` of the baseline mean.
    The last baseline epoch is left out: under clock skew it can overlap the
    first transmitted bit.
    """
    if cfg.hysteresis_threshold is not None:
        return cfg.hysteresis_threshold
    base = [s.raw_bandwidth for s in samples if s.baseline][:-1]
    if len(base) < 2:
        raise ConfigError("automatic hysteresis threshold needs at least three baseline epochs")
    # a window can leak up to one fine chunk into its neighbour, so never go below that
    return max(cfg.gamma_factor * statistics.stdev(base), cfg.fine_fraction * statistics.fmean(base))


# -- blocking wrappers ----------------------------------------------------------

def transmit(bits: Sequence[int], cfg: ChannelConfig, kernel, timer=None, contender: Contender | None = None) -> TransmitLog:
    timer = timer if timer is not None else kernel.timer
    contender = contender or cfg.contender()
    contender.alignment = kernel.config.alignment
    if cfg.start_epoch is None:
        raise ConfigError("transmit needs an explicit start_epoch on the timer's clock")
    return drive(transmitter_proc(tuple(bits), cfg, contender, cfg.start_epoch, kernel.config.buffer_size), kernel, timer)


def receive(n_epochs: int, cfg: ChannelConfig, kernel, timer=None, contender: Contender | None = None) -> list[EpochSample]:
    timer = timer if timer is not None else kernel.timer
    contender = contender or cfg.contender()
    contender.alignment = kernel.config.alignment
    if n_epochs <= 0:
        return []
    if cfg.start_epoch is None:
        raise ConfigError("receive needs an explicit start_epoch on the timer's clock")
    return drive(receiver_proc(n_epochs, cfg, contender, cfg.start_epoch, kernel.config.buffer_size), kernel, timer)


# -- sessions -------------------------------------------------------------------

@dataclass
class SessionResult:
    sent: Bitstream
    received: Bitstream
    samples: list[EpochSample]
    gamma: float
    tx_log: TransmitLog
    start_epoch: float
    elapsed: float
    time_kind: str
    skew: float = 0.0
    events: int = 0


def auto_start_epoch(cfg: ChannelConfig, skew: float = 0.0) -> float:
    """Earliest grid-aligned start leaving room for calibration and the early-start phase."""
    T = cfg.epoch_interval
    need = cfg.calibration_warmup + (cfg.baseline_epochs + 1) * T + abs(skew)
    return math.ceil(need / T) * T


def simulate_session(
    bits: Sequence[int],
    cfg: ChannelConfig,
    model: MemorySystemModel,
    skew: float = 0.0,
    record_chunks: bool = False,
) -> SessionResult:
    """Co-schedule transmitter and receiver on the model's virtual clock.

    ``skew`` delays the receiver's epoch grid relative to the transmitter's.
    The caller's model is cloned, so repeated calls are independent.
    """
    bits = Bitstream(tuple(bits))
    model = model.clone()
    apply_buffers(model, cfg.tx_buffer_size, cfg.rx_buffer_size)
    tx = actors_by_role(model, "transmitter")
    rx = actors_by_role(model, "receiver")
    if not tx or not rx:
        raise ConfigError("model needs one transmitter and one receiver actor")
    start = cfg.start_epoch if cfg.start_epoch is not None else auto_start_epoch(cfg, skew)
    sim = Simulator(model)
    tx_c = cfg.contender(record_chunks)
    rx_c = cfg.contender(record_chunks)
    n_epochs = len(bits) * cfg.epochs_per_bit
    tx_p = sim.spawn(tx[0].name, transmitter_proc(bits, cfg, tx_c, start, cfg.tx_buffer_size))
    rx_p = sim.spawn(rx[0].name, receiver_proc(n_epochs, cfg, rx_c, start, cfg.rx_buffer_size), clock_offset=-skew)
    sim.run()
    log: TransmitLog = tx_p.value
    samples: list[EpochSample] = rx_p.value
    if samples:
        gamma = resolve_gamma(samples, cfg)
        received = decode_trace(samples, gamma, cfg.decoder_mode, cfg.epochs_per_bit)
    else:
        gamma, received = (cfg.hysteresis_threshold or 0.0), Bitstream()
    return SessionResult(bits, received, samples, gamma, log, start, log.end - start, "virtual", skew, sim.events)


def _native_transmitter(bits, cfg: ChannelConfig, kcfg: KernelConfig, conn) -> None:
    try:
        timer = PreciseTimer(cfg.spin_threshold)
        kernel = NativeKernel(kcfg, timer=timer)
        conn.send(("ready", None))
        start_wall = conn.recv()
        local_start = timer.now() + (start_wall - time.time())
        contender = cfg.contender()
        contender.alignment = kcfg.alignment
        log = drive(transmitter_proc(bits, cfg, contender, local_start, kcfg.buffer_size), kernel, timer)
        conn.send(("ok", log))
    except Exception as exc:  # reported to the parent
        conn.send(("error", repr(exc)))


def native_session(bits: Sequence[int], cfg: ChannelConfig, lead: float = 0.5, cache_bypass: bool = True) -> SessionResult:
    """Run transmitter and receiver as two processes sharing only a wall-clock start epoch.

    Without a configured ``start_epoch`` the start is set ``lead`` seconds
    after both sides have allocated their buffers.
    """
    bits = Bitstream(tuple(bits))
    ctx = mp.get_context("fork")
    parent, child_end = ctx.Pipe()
    tx_cfg = KernelConfig(cfg.tx_buffer_size, cache_bypass=cache_bypass)
    child = ctx.Process(target=_native_transmitter, args=(tuple(bits), cfg, tx_cfg, child_end), daemon=True)
    child.start()
    try:
        timer = PreciseTimer(cfg.spin_threshold)
        kernel = NativeKernel(KernelConfig(cfg.rx_buffer_size, cache_bypass=cache_bypass), timer=timer)
        status, payload = parent.recv()
        if status != "ready":
            raise RuntimeError(f"transmitter process failed: {payload}")
        start_wall = cfg.start_epoch
        if start_wall is None:
            start_wall = time.time() + lead + cfg.calibration_warmup + cfg.baseline_epochs * cfg.epoch_interval
        parent.send(start_wall)
        local_start = timer.now() + (start_wall - time.time())
        contender = cfg.contender()
        samples = drive(
            receiver_proc(len(bits) * cfg.epochs_per_bit, cfg, contender, local_start, cfg.rx_buffer_size), kernel, timer
        )
        if not parent.poll(max(60.0, 4 * len(bits) * cfg.bit_interval + 30)):
            raise RuntimeError("transmitter process did not report back")
        status, payload = parent.recv()
    finally:
        child.join(timeout=10)
        if child.is_alive():
            child.terminate()
    if status != "ok":
        raise RuntimeError(f"transmitter process failed: {payload}")
    log: TransmitLog = payload
    if samples:
        gamma = resolve_gamma(samples, cfg)
        received = decode_trace(samples, gamma, cfg.decoder_mode, cfg.epochs_per_bit)
    else:
        gamma, received = (cfg.hysteresis_threshold or 0.0), Bitstream()
    return SessionResult(bits, received, samples, gamma, log, log.start_epoch, log.end - log.start_epoch, "wall")


def run_session(bits: Sequence[int], cfg: ChannelConfig, model: MemorySystemModel | None = None, *, skew: float = 0.0, native: bool = False) -> SessionResult:
    if native:
        return native_session(bits, cfg)
    if model is None:
        raise ConfigError("simulated sessions need a memory-system model")
    return simulate_session(bits, cfg, model, skew)


def fully_overlapped_epochs(bit_index: int, epochs_per_bit: int, epoch: float, skew: float) -> int:
    """How many of a bit's receiver epochs lie entirely inside its transmit window.

    The receiver's epochs for bit ``i`` are ``[(iR + j) T + skew, (iR + j + 1) T + skew)``
    for ``j < R``; the transmit window is ``[i R T, (i + 1) R T)``.
    """
    R = epochs_per_bit
    lo, hi = bit_index * R * epoch, (bit_index + 1) * R * epoch
    count = 0
    for j in range(R):
        a = (bit_index * R + j) * epoch + skew
        if a >= lo and a + epoch <= hi:
            count += 1
    return count
