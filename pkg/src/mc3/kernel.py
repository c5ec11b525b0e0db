"""Memory-contention kernels: "copy this many bytes and tell me how fast it went".

``NativeKernel`` streams real memory with numpy copies. Python has no
portable non-temporal store, so cache bypass is approximated by sweeping a
backing region at least four times the last-level cache: by the time the
sweep wraps around, the lines it touched have been evicted and every copy
reaches DRAM. The chosen strategy is reported in ``metadata``.

``SimulatedKernel`` asks a :class:`mc3.sim.Simulator` to move the bytes on
its virtual clock at the memory model's rate.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllocationFailure, BackendUnavailable, CacheInflatedReading, CalibrationFailure, ConfigError
from .units import MiB

TOUCH_PATTERNS = ("sequential_copy",)
MAX_BACKING = 512 * MiB


@dataclass(frozen=True)
class KernelConfig:
    buffer_size: int
    cache_bypass: bool = True
    alignment: int = 64
    touch_pattern: str = "sequential_copy"
    threads: int = 1

    def __post_init__(self) -> None:
        if self.buffer_size <= 0:
            raise ConfigError("buffer_size must be positive")
        if self.alignment <= 0 or self.alignment & (self.alignment - 1):
            raise ConfigError("alignment must be a power of two")
        if self.touch_pattern not in TOUCH_PATTERNS:
            raise ConfigError(f"touch_pattern must be one of {TOUCH_PATTERNS}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass(frozen=True)
class CopySample:
    """One copy operation. ``duration`` is in seconds, ``timestamp`` is the end time."""

    bytes_moved: int
    duration: float
    bandwidth: float
    timestamp: float

    @property
    def duration_ns(self) -> float:
        return self.duration * 1e9


def last_level_cache_bytes() -> int | None:
    """Largest cache size advertised by sysfs for cpu0, or None if unknown."""
    root = Path("/sys/devices/system/cpu/cpu0/cache")
    sizes = []
    for entry in root.glob("index*/size"):
        text = entry.read_text().strip().upper()
        try:
            if text.endswith("K"):
                sizes.append(int(text[:-1]) * 1024)
            elif text.endswith("M"):
                sizes.append(int(text[:-1]) * 1024 * 1024)
            else:
                sizes.append(int(text))
        except ValueError:
            continue
    return max(sizes) if sizes else None


class ContentionKernel:
    """Common surface of every backend."""

    config: KernelConfig
    peak_bandwidth: float | None = None
    timer = None

    def copy_buffer(self, bytes_requested: int) -> CopySample:
        raise NotImplementedError

    @property
    def metadata(self) -> dict:
        return {}


class NativeKernel(ContentionKernel):
    def __init__(
        self,
        config: KernelConfig,
        peak_bandwidth: float | None = None,
        llc_bytes: int | None = None,
        max_backing: int = MAX_BACKING,
        timer=None,
    ):
        from .timing import PreciseTimer

        self.config = config
        self.peak_bandwidth = peak_bandwidth
        self.timer = timer if timer is not None else PreciseTimer()
        self.llc_bytes = llc_bytes if llc_bytes is not None else last_level_cache_bytes()
        a = config.alignment
        backing = config.buffer_size
        if config.cache_bypass:
            if self.llc_bytes:
                backing = max(backing, min(4 * self.llc_bytes, max_backing))
                self.strategy = "llc-sweep" if backing >= 4 * self.llc_bytes else "llc-sweep-capped"
            else:
                self.strategy = "llc-sweep-unknown-llc"
        else:
            self.strategy = "cached"
        backing = -(-backing // a) * a
        try:
            self._src = np.empty(backing, dtype=np.uint8)
            self._dst = np.empty(backing, dtype=np.uint8)
        except MemoryError as exc:
            raise AllocationFailure(f"cannot allocate 2 x {backing} bytes") from exc
        # touch every page so page faults stay out of the measurements
        self._src[:] = 0xA5
        self._dst[:] = 0
        self.backing = backing
        self._offset = 0
        self._pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    @property
    def metadata(self) -> dict:
        return {
            "backend": "native",
            "strategy": self.strategy,
            "non_temporal": False,
            "llc_bytes": self.llc_bytes,
            "backing_bytes": self.backing,
            "threads": self.config.threads,
        }

    def _segments(self, nbytes: int) -> list[tuple[int, int]]:
        segs = []
        off = self._offset
        left = nbytes
        while left > 0:
            k = min(left, self.backing - off)
            segs.append((off, k))
            left -= k
            off = (off + k) % self.backing
        self._offset = off
        return segs

    def _copy(self, segs: list[tuple[int, int]]) -> None:
        src, dst = self._src, self._dst
        for off, k in segs:
            np.copyto(dst[off : off + k], src[off : off + k])

    def copy_buffer(self, bytes_requested: int) -> CopySample:
        if bytes_requested <= 0:
            raise ValueError("bytes_requested must be positive")
        segs = self._segments(bytes_requested)
        if self._pool is None:
            t0 = time.perf_counter_ns()
            self._copy(segs)
            t1 = time.perf_counter_ns()
        else:
            parts = _split_segments(segs, self.config.threads)
            t0 = time.perf_counter_ns()
            list(self._pool.map(self._copy, parts))
            t1 = time.perf_counter_ns()
        duration = max(t1 - t0, 1) / 1e9
        bw = bytes_requested / duration
        if self.config.cache_bypass and self.peak_bandwidth and bw > 2 * self.peak_bandwidth and bytes_requested >= 4096:
            raise CacheInflatedReading(
                f"measured {bw / 1e9:.1f} GB/s exceeds twice the configured peak {self.peak_bandwidth / 1e9:.1f} GB/s"
            )
        return CopySample(bytes_requested, duration, bw, t1 / 1e9)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()


def _split_segments(segs: list[tuple[int, int]], n: int) -> list[list[tuple[int, int]]]:
    total = sum(k for _, k in segs)
    share = math.ceil(total / n)
    parts: list[list[tuple[int, int]]] = [[]]
    room = share
    for off, k in segs:
        while k > 0:
            take = min(k, room)
            parts[-1].append((off, take))
            off += take
            k -= take
            room -= take
            if room == 0 and len(parts) < n:
                parts.append([])
                room = share
    return [p for p in parts if p]


class SimulatedKernel(ContentionKernel):
    """Kernel for ``actor`` inside a simulator; copies advance virtual time."""

    def __init__(self, model, actor: str, config: KernelConfig | None = None, sim=None, clock_offset: float = 0.0):
        from .sim import Simulator, VirtualTimer

        self.model = model
        self.actor = actor
        model.actor(actor)
        self.config = config or KernelConfig(buffer_size=MiB)
        self.sim = sim if sim is not None else Simulator(model)
        self.timer = VirtualTimer(self.sim, clock_offset)
        self.peak_bandwidth = model.total_bandwidth

    @property
    def metadata(self) -> dict:
        return {"backend": "simulated", "strategy": "model", "model": self.model.name, "actor": self.actor}

    def copy_buffer(self, bytes_requested: int) -> CopySample:
        from .timing import Copy

        if bytes_requested <= 0:
            raise ValueError("bytes_requested must be positive")
        return self.sim.run_single(self.actor, Copy(bytes_requested), self.timer.offset)


def make_native_kernel(buffer_size: int, **kw) -> NativeKernel:
    try:
        return NativeKernel(KernelConfig(buffer_size=buffer_size), **kw)
    except OSError as exc:
        raise BackendUnavailable(str(exc)) from exc


def mc_utilization(kernel: ContentionKernel, probe_duration: float, peak_bandwidth: float | None = None) -> float:
    """Fraction of the peak memory bandwidth this kernel achieves, clamped to [0, 1]."""
    if probe_duration <= 0:
        raise ValueError("probe_duration must be positive")
    peak = peak_bandwidth or kernel.peak_bandwidth
    if not peak:
        raise CalibrationFailure("no peak bandwidth reference; configure or calibrate one")
    if isinstance(kernel, SimulatedKernel):
        model = kernel.model
        saved = {n: a.active for n, a in model.actors.items()}
        for n, a in model.actors.items():
            a.active = a.role == "background" or n == kernel.actor
        try:
            model.now = kernel.sim.now
            achieved = model.step(probe_duration).get(kernel.actor, 0.0)
        finally:
            for n, flag in saved.items():
                model.actors[n].active = flag
        kernel.sim.advance_to(model.now)
    else:
        timer = kernel.timer
        start = timer.now()
        moved = 0
        while timer.now() - start < probe_duration:
            moved += kernel.copy_buffer(kernel.config.buffer_size).bytes_moved
        achieved = moved / (timer.now() - start)
    return min(max(achieved / peak, 0.0), 1.0)


def default_threads() -> int:
    return max(1, (os.cpu_count() or 1) - 1)
