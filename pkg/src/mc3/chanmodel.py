"""Shared-DRAM contention model.

Given which actors are currently streaming, the model yields each actor's
achieved bandwidth. Receivers lose a fraction ``slowdown(u)`` of their
demand, where ``u`` is the memory-controller utilisation of every other
active non-receiver actor. Noise is multiplicative: a Gaussian factor
times a two-point outlier factor (``1`` or ``1 - outlier_magnitude``), drawn
once per actor per noise interval from a seeded stream. When the sum of
achieved bandwidths would exceed the total, everything is scaled down
proportionally.

The default curve and buffer tables interpolate only the anchor points that
are quoted for the Orin measurements; everything between and beyond them
is calibration, not ground truth.
"""
from __future__ import annotations

import bisect
import copy
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ConfigError, UnknownActor
from .units import GB, MiB

ROLES = ("transmitter", "receiver", "background")

ORIN_NX_BANDWIDTH = 102e9
ORIN_AGX_BANDWIDTH = 204.8e9
ORIN_NANO_BANDWIDTH = 68e9

CPU_RECEIVER_DEMAND = 8 * GB
GPU_RECEIVER_FACTOR = 4.0


class PiecewiseLinear:
    """Monotone piecewise-linear map, clamped to the end values outside its range."""

    def __init__(self, points: Iterable[tuple[float, float]]):
        pts = sorted((float(x), float(y)) for x, y in points)
        if not pts:
            raise ConfigError("interpolation table needs at least one point")
        xs = [p[0] for p in pts]
        if len(set(xs)) != len(xs):
            raise ConfigError("interpolation table has duplicate x values")
        ys = [p[1] for p in pts]
        if any(b < a for a, b in zip(ys, ys[1:])):
            raise ConfigError("interpolation table must be non-decreasing")
        self.xs, self.ys = xs, ys

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.xs, self.ys))

    def __call__(self, x: float) -> float:
        xs, ys = self.xs, self.ys
        if x <= xs[0]:
            return ys[0]
        if x >= xs[-1]:
            return ys[-1]
        i = bisect.bisect_right(xs, x)
        x0, x1, y0, y1 = xs[i - 1], xs[i], ys[i - 1], ys[i]
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)

    def __eq__(self, other) -> bool:
        return isinstance(other, PiecewiseLinear) and self.points == other.points

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.points!r})"


class SlowdownCurve(PiecewiseLinear):
    """Transmitter utilisation fraction -> receiver slowdown fraction."""

    def __init__(self, points: Iterable[tuple[float, float]]):
        super().__init__(points)
        if self(0.0) != 0.0:
            raise ConfigError("slowdown(0) must be 0")
        if any(not 0 <= y < 1 for y in self.ys):
            raise ConfigError("slowdown values must lie in [0, 1)")


@dataclass
class NoiseModel:
    gaussian_sigma: float = 0.0
    outlier_probability: float = 0.0
    outlier_magnitude: float = 0.0
    seed: int = 0
    interval: float = 100e-6

    def __post_init__(self) -> None:
        if min(self.gaussian_sigma, self.outlier_probability, self.outlier_magnitude) < 0:
            raise ConfigError("noise fractions must be non-negative")
        if self.outlier_probability > 1:
            raise ConfigError("outlier_probability must be <= 1")
        if self.interval <= 0:
            raise ConfigError("noise interval must be positive")

    @property
    def silent(self) -> bool:
        return self.gaussian_sigma == 0 and (self.outlier_probability == 0 or self.outlier_magnitude == 0)


@dataclass
class ActorProfile:
    """One party competing for DRAM bandwidth.

    ``demand_bandwidth`` is what the actor achieves alone. ``noise`` overrides
    the model-wide noise amplitudes for this actor (seed and interval are
    always the model's). ``sensitivity`` scales the slowdown a receiver
    perceives. ``square_wave`` is ``(period, duty)`` for background actors.
    """

    name: str
    demand_bandwidth: float
    role: str = "receiver"
    active: bool = True
    noise: NoiseModel | None = None
    sensitivity: float = 1.0
    square_wave: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.demand_bandwidth < 0:
            raise ConfigError(f"actor {self.name!r} has negative demand")
        if self.role not in ROLES:
            raise ConfigError(f"actor role must be one of {ROLES}, got {self.role!r}")
        if self.square_wave is not None:
            period, duty = self.square_wave
            if period <= 0 or not 0 <= duty <= 1:
                raise ConfigError("square_wave needs period > 0 and 0 <= duty <= 1")

    def on_at(self, t: float) -> bool:
        if self.square_wave is None:
            return True
        period, duty = self.square_wave
        return (t % period) < duty * period


class _NoiseStream:
    """Lazily generated per-slot noise factors for one actor."""

    BLOCK = 4096

    def __init__(self, noise: NoiseModel, seed: int, index: int):
        self.sigma = noise.gaussian_sigma
        self.p = noise.outlier_probability
        self.mag = noise.outlier_magnitude
        self.rng = np.random.default_rng([seed, index])
        self.values = np.empty(0)
        self.silent = noise.silent

    def __getitem__(self, k: int) -> float:
        if self.silent:
            return 1.0
        while k >= len(self.values):
            n = self.BLOCK
            z = self.rng.standard_normal(n)
            u = self.rng.random(n)
            f = (1.0 + self.sigma * z) * np.where(u < self.p, 1.0 - self.mag, 1.0)
            self.values = np.concatenate([self.values, np.maximum(f, 0.0)])
        return float(self.values[k])


@dataclass
class MemorySystemModel:
    total_bandwidth: float
    slowdown_curve: SlowdownCurve
    noise: NoiseModel = field(default_factory=NoiseModel)
    actors: dict[str, ActorProfile] = field(default_factory=dict)
    tx_utilization: PiecewiseLinear | None = None
    rx_sensitivity: PiecewiseLinear | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.total_bandwidth <= 0:
            raise ConfigError("total_bandwidth must be positive")
        if isinstance(self.actors, (list, tuple)):
            self.actors = {a.name: a for a in self.actors}
        self.now = 0.0
        self._streams: dict[str, _NoiseStream] = {}

    # -- configuration -------------------------------------------------
    def add_actor(self, actor: ActorProfile) -> ActorProfile:
        self.actors[actor.name] = actor
        self._streams.pop(actor.name, None)
        return actor

    def actor(self, name: str) -> ActorProfile:
        try:
            return self.actors[name]
        except KeyError:
            raise UnknownActor(name) from None

    def clone(self, **changes) -> MemorySystemModel:
        """Deep copy with fresh clock and noise streams."""
        m = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(m, k, v)
        m.now = 0.0
        m._streams = {}
        return m

    def reseed(self, seed: int) -> MemorySystemModel:
        m = self.clone()
        m.noise = replace(m.noise, seed=seed)
        return m

    def utilization_for_buffer(self, buffer_size: int) -> float:
        if self.tx_utilization is None:
            raise ConfigError("model has no transmitter buffer -> utilisation table")
        return self.tx_utilization(buffer_size)

    def sensitivity_for_buffer(self, buffer_size: int) -> float:
        return 1.0 if self.rx_sensitivity is None else self.rx_sensitivity(buffer_size)

    def slowdown(self, utilization: float) -> float:
        return self.slowdown_curve(utilization)

    # -- noise ---------------------------------------------------------
    def slot_of(self, t: float) -> int:
        return math.floor(t / self.noise.interval)

    def slot_end(self, k: int) -> float:
        return (k + 1) * self.noise.interval

    def noise_factor(self, name: str, slot: int) -> float:
        stream = self._streams.get(name)
        if stream is None:
            actor = self.actor(name)
            index = list(self.actors).index(name)
            base = actor.noise if actor.noise is not None else self.noise
            stream = self._streams[name] = _NoiseStream(base, self.noise.seed, index)
        return stream[slot]

    @property
    def noiseless(self) -> bool:
        if not self.noise.silent:
            return False
        return all(a.noise is None or a.noise.silent for a in self.actors.values())

    # -- bandwidth -----------------------------------------------------
    def _active_names(self, t: float, extra: Iterable[str] = ()) -> list[str]:
        names = [n for n, a in self.actors.items() if a.active and a.on_at(t)]
        for n in extra:
            if n not in names:
                names.append(n)
        return names

    def rates(self, active: Iterable[str], slot: int | None = None) -> dict[str, float]:
        """Achieved bandwidth of each actor in ``active``; noise from ``slot`` if given."""
        names = list(active)
        nominal = {}
        for n in names:
            a = self.actor(n)
            f = 1.0 if slot is None else self.noise_factor(n, slot)
            nominal[n] = a.demand_bandwidth * f
        pressure = sum(v for n, v in nominal.items() if self.actors[n].role != "receiver")
        out = {}
        for n in names:
            a = self.actors[n]
            if a.role == "receiver":
                others = pressure / self.total_bandwidth
                s = min(self.slowdown_curve(others) * a.sensitivity, 1.0)
                out[n] = nominal[n] * (1.0 - s)
            else:
                out[n] = nominal[n]
        total = sum(out.values())
        if total > self.total_bandwidth:
            scale = self.total_bandwidth / total
            out = {n: v * scale for n, v in out.items()}
        return out

    def achieved_bandwidth(self, name: str, t: float | None = None) -> float:
        """Noiseless achieved bandwidth of ``name`` given the actors' ``active`` flags."""
        actor = self.actor(name)
        if not actor.active:
            return 0.0
        t = self.now if t is None else t
        return self.rates(self._active_names(t, [name]))[name]

    def utilization(self, name: str) -> float:
        return min(max(self.achieved_bandwidth(name) / self.total_bandwidth, 0.0), 1.0)

    def next_change(self, t: float) -> float:
        """Earliest time after ``t`` at which any background square wave toggles."""
        best = math.inf
        for a in self.actors.values():
            if a.square_wave is None or not a.active:
                continue
            period, duty = a.square_wave
            base = math.floor(t / period) * period
            for edge in (base + duty * period, base + period, base + period + duty * period):
                if edge > t:
                    best = min(best, edge)
                    break
        return best

    def step(self, dt: float) -> dict[str, float]:
        """Advance the model clock by ``dt``; return each active actor's mean bandwidth."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        t, end = self.now, self.now + dt
        segments = []
        quiet = self.noiseless
        while t < end:
            k = None if quiet else self.slot_of(t)
            seg_end = min(end, self.next_change(t)) if quiet else min(end, self.slot_end(k), self.next_change(t))
            if seg_end <= t:
                seg_end = min(end, math.nextafter(t, math.inf))
            segments.append((seg_end - t, self.rates(self._active_names(t), k)))
            t = seg_end
        self.now = end
        names = [n for n, a in self.actors.items() if a.active]
        if len(segments) == 1:
            rates = segments[0][1]
            return {n: rates.get(n, 0.0) for n in names}
        span = sum(w for w, _ in segments)
        return {n: sum(w * r.get(n, 0.0) for w, r in segments) / span for n in names}


# -- calibrated presets ------------------------------------------------------

def default_slowdown_curve() -> SlowdownCurve:
    # ~0 at 10 % utilisation, 10 % slowdown at 20 %; beyond that an extrapolated gentle rise
    return SlowdownCurve([(0.0, 0.0), (0.10, 0.0), (0.20, 0.10), (1.0, 0.50)])


def default_tx_utilization() -> PiecewiseLinear:
    # anchors: 0.5/0.6 MiB ~ nothing, 0.8 MiB ~ 10 %, 2 MiB ~ 20 %; +5 % per doubling after
    pts = [(0.5 * MiB, 0.0), (0.6 * MiB, 0.01), (0.8 * MiB, 0.10), (2 * MiB, 0.20)]
    size, util = 2 * MiB, 0.20
    while size < 128 * MiB:
        size *= 2
        util += 0.05
        pts.append((size, round(util, 4)))
    return PiecewiseLinear(pts)


def agx_tx_utilization() -> PiecewiseLinear:
    """11-core CPU transmitter on a 204.8 GB/s part: 1 MiB already contends visibly."""
    pts = [(0.5 * MiB, 0.02), (1 * MiB, 0.15), (2 * MiB, 0.20)]
    size, util = 2 * MiB, 0.20
    while size < 128 * MiB:
        size *= 2
        util += 0.05
        pts.append((size, round(util, 4)))
    return PiecewiseLinear(pts)


def default_rx_sensitivity() -> PiecewiseLinear:
    # receivers below ~1 MiB are mostly cache-served and barely notice contention
    return PiecewiseLinear([(0.25 * MiB, 0.1), (0.5 * MiB, 0.4), (1 * MiB, 1.0)])


def cpu_receiver(name: str = "receiver", demand: float = CPU_RECEIVER_DEMAND) -> ActorProfile:
    return ActorProfile(name, demand, role="receiver")


def gpu_receiver(name: str = "receiver", factor: float = GPU_RECEIVER_FACTOR) -> ActorProfile:
    """High-bandwidth receiver profile: a few times the CPU receiver's demand."""
    return ActorProfile(name, CPU_RECEIVER_DEMAND * factor, role="receiver")


def transmitter_for_buffer(model: MemorySystemModel, buffer_size: int, name: str = "transmitter") -> ActorProfile:
    u = model.utilization_for_buffer(buffer_size)
    return ActorProfile(name, u * model.total_bandwidth, role="transmitter")


def default_calibration(
    tx_buffer_size: int = 2 * MiB,
    rx_buffer_size: int = 1 * MiB,
    noise: NoiseModel | None = None,
) -> MemorySystemModel:
    """Orin NX-sized model (102 GB/s) with CPU transmitter and CPU receiver."""
    model = MemorySystemModel(
        ORIN_NX_BANDWIDTH,
        default_slowdown_curve(),
        noise or NoiseModel(),
        tx_utilization=default_tx_utilization(),
        rx_sensitivity=default_rx_sensitivity(),
        name="orin-nx-default",
    )
    model.add_actor(transmitter_for_buffer(model, tx_buffer_size))
    rx = cpu_receiver()
    rx.sensitivity = model.sensitivity_for_buffer(rx_buffer_size)
    model.add_actor(rx)
    return model


AGX_EPOCH = 156.25e-6  # 6.4 kbit/s at one epoch per bit


def orin_agx_like(
    tx_buffer_size: int = 1 * MiB,
    rx_buffer_size: int = 1 * MiB,
    seed: int = 1,
    interval: float = AGX_EPOCH,
) -> MemorySystemModel:
    """CPU transmitter, GPU receiver on a 204.8 GB/s memory system.

    Receiver readings are tight with a rare heavy outlier tail; the
    transmitter's contention generation is itself noisy, which is what
    makes weak (small-buffer) transmitters lose bits.
    """
    model = MemorySystemModel(
        ORIN_AGX_BANDWIDTH,
        default_slowdown_curve(),
        NoiseModel(gaussian_sigma=0.002, outlier_probability=2e-4, outlier_magnitude=0.15, seed=seed, interval=interval),
        tx_utilization=agx_tx_utilization(),
        rx_sensitivity=default_rx_sensitivity(),
        name="orin-agx-like",
    )
    tx = transmitter_for_buffer(model, tx_buffer_size)
    tx.noise = NoiseModel(gaussian_sigma=0.12, outlier_probability=0.0, outlier_magnitude=0.0)
    model.add_actor(tx)
    rx = gpu_receiver()
    rx.sensitivity = model.sensitivity_for_buffer(rx_buffer_size)
    model.add_actor(rx)
    return model


def noiseless(tx_buffer_size: int = 2 * MiB, rx_buffer_size: int = 1 * MiB) -> MemorySystemModel:
    model = default_calibration(tx_buffer_size, rx_buffer_size)
    model.name = "noiseless"
    return model


def apply_buffers(model: MemorySystemModel, tx_buffer_size: int | None, rx_buffer_size: int | None) -> None:
    """Re-derive transmitter demand and receiver sensitivity from buffer sizes in place."""
    for a in model.actors.values():
        if a.role == "transmitter" and tx_buffer_size is not None and model.tx_utilization is not None:
            a.demand_bandwidth = model.utilization_for_buffer(tx_buffer_size) * model.total_bandwidth
        elif a.role == "receiver" and rx_buffer_size is not None and model.rx_sensitivity is not None:
            a.sensitivity = model.sensitivity_for_buffer(rx_buffer_size)


def actors_by_role(model: MemorySystemModel, role: str) -> list[ActorProfile]:
    return [a for a in model.actors.values() if a.role == role]
