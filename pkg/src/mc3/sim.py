"""Single-threaded discrete-event loop for simulated actors.

Each actor is a protocol generator (see :mod:`mc3.timing`). Outstanding
copies are treated as fluid flows: between events every copying actor
progresses at the rate the memory model assigns to the current set of
active actors and noise slot. Events are copy completions, sleep wake-ups,
noise-slot boundaries and background square-wave edges, so the schedule
is exact rather than time-stepped.
"""
from __future__ import annotations

import math
from typing import Any

from .chanmodel import MemorySystemModel
from .errors import KernelFailure
from .kernel import CopySample
from .timing import NOW, Copy, Proc, SleepUntil

_READY, _COPY, _SLEEP, _DONE = range(4)


class SimProcess:
    __slots__ = (
        "actor",
        "gen",
        "offset",
        "state",
        "result",
        "remaining",
        "nbytes",
        "copy_start",
        "wake",
        "value",
        "name",
    )

    def __init__(self, actor: str, gen: Proc, offset: float, name: str):
        self.actor = actor
        self.gen = gen
        self.offset = offset
        self.state = _READY
        self.result: Any = None
        self.remaining = 0.0
        self.nbytes = 0
        self.copy_start = 0.0
        self.wake = 0.0
        self.value: Any = None
        self.name = name

    @property
    def done(self) -> bool:
        return self.state == _DONE


class Simulator:
    """Virtual-clock scheduler over a :class:`MemorySystemModel`.

    ``clock_offset`` of a process is its local clock minus true virtual time;
    a receiver whose epochs lag the transmitter's by ``skew`` seconds runs
    with offset ``-skew``.
    """

    def __init__(self, model: MemorySystemModel, start: float = 0.0):
        self.model = model
        self.now = start
        self.procs: list[SimProcess] = []
        self.events = 0

    def spawn(self, actor: str, gen: Proc, clock_offset: float = 0.0, name: str | None = None) -> SimProcess:
        self.model.actor(actor)
        p = SimProcess(actor, gen, clock_offset, name or actor)
        self.procs.append(p)
        return p

    def advance_to(self, t: float) -> None:
        """Move the clock forward with no actor copying (used by idle stand-alone timers)."""
        if t > self.now:
            self.now = t
            self.model.now = t

    def _resume(self, p: SimProcess) -> None:
        gen = p.gen
        result = p.result
        while True:
            try:
                req = gen.send(result)
            except StopIteration as stop:
                p.state = _DONE
                p.value = stop.value
                return
            if type(req) is Copy:
                if req.nbytes <= 0:
                    raise KernelFailure(f"copy of {req.nbytes} bytes requested")
                p.state = _COPY
                p.nbytes = req.nbytes
                p.remaining = float(req.nbytes)
                p.copy_start = self.now
                return
            if type(req) is SleepUntil:
                local = self.now + p.offset
                if req.deadline <= local:
                    result = local
                    continue
                p.state = _SLEEP
                p.wake = req.deadline
                return
            if req is NOW:
                result = self.now + p.offset
                continue
            raise TypeError(f"unknown request {req!r}")

    def run(self, until: float = math.inf) -> None:
        """Run until every process finishes (or the clock reaches ``until``)."""
        model = self.model
        noisy = not model.noiseless
        square = any(a.square_wave is not None for a in model.actors.values())
        ready = [p for p in self.procs if p.state == _READY]
        cache_key = None
        rates: dict[str, float] = {}
        while True:
            for p in ready:
                self._resume(p)
            live = [p for p in self.procs if p.state == _COPY or p.state == _SLEEP]
            if not live:
                break
            now = self.now
            copiers = [p for p in live if p.state == _COPY]
            slot = None
            t_next = until
            if noisy:
                slot = model.slot_of(now)
                end = model.slot_end(slot)
                if end <= now:
                    slot += 1
                    end = model.slot_end(slot)
                t_next = min(t_next, end)
            background = ()
            if square:
                t_next = min(t_next, model.next_change(now))
                background = tuple(n for n, a in model.actors.items() if a.square_wave is not None and a.active and a.on_at(now))
            if copiers:
                key = (tuple(p.actor for p in copiers), slot, background)
                if key != cache_key:
                    active = [p.actor for p in copiers]
                    active += [n for n, a in model.actors.items() if a.role == "background" and a.active and a.on_at(now) and n not in active]
                    rates = model.rates(active, slot)
                    cache_key = key
                for p in copiers:
                    r = rates[p.actor]
                    if r > 0:
                        t = now + p.remaining / r
                        if t < t_next:
                            t_next = t
            for p in live:
                if p.state == _SLEEP:
                    t = p.wake - p.offset
                    if t < t_next:
                        t_next = t
            if t_next == math.inf:
                raise KernelFailure("simulation stalled: every copying actor has zero bandwidth")
            if t_next >= until and until != math.inf:
                t_next = until
            if t_next < now:
                t_next = now
            dt = t_next - now
            self.now = t_next
            self.events += 1
            ready = []
            for p in copiers:
                r = rates[p.actor]
                p.remaining -= r * dt
                if p.remaining <= 1e-9 * p.nbytes or (r > 0 and p.remaining / r <= 1e-15):
                    duration = t_next - p.copy_start
                    p.state = _READY
                    p.result = CopySample(p.nbytes, duration, p.nbytes / duration if duration > 0 else math.inf, t_next + p.offset)
                    ready.append(p)
            for p in live:
                if p.state == _SLEEP and p.wake - p.offset <= t_next:
                    p.state = _READY
                    p.result = max(t_next + p.offset, p.wake)
                    ready.append(p)
            if t_next >= until:
                break
        model.now = self.now

    def run_single(self, actor: str, request, clock_offset: float = 0.0):
        """Execute one request for ``actor`` alone and return its result."""

        def one():
            return (yield request)

        p = self.spawn(actor, one(), clock_offset)
        self.run()
        self.procs.remove(p)
        return p.value


class VirtualTimer:
    """Timer view of a simulator's clock for one actor."""

    virtual = True

    def __init__(self, sim: Simulator, clock_offset: float = 0.0):
        self.sim = sim
        self.offset = clock_offset

    def now(self) -> float:
        return self.sim.now + self.offset

    def sleep_until(self, deadline: float) -> float:
        self.sim.advance_to(deadline - self.offset)
        return max(self.now(), deadline)

    def sleep_for(self, duration: float):
        from .timing import TimerStats

        start = self.now()
        end = self.sleep_until(start + duration)
        return TimerStats.from_seconds(duration, end - start)
