"""Parsing and formatting of human-readable sizes, durations and rates."""
from __future__ import annotations

import re

_SIZE_UNITS = {
    "": 1,
    "b": 1,
    "kb": 10**3,
    "mb": 10**6,
    "gb": 10**9,
    "kib": 2**10,
    "mib": 2**20,
    "gib": 2**30,
}

_TIME_UNITS = {
    "": 1.0,
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "µs": 1e-6,
    "ns": 1e-9,
}

_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_RE = re.compile(_NUM + r"\s*([a-zA-Zµ/]*)\s*$")

KiB = 2**10
MiB = 2**20
GiB = 2**30
GB = 10**9


def _split(text: str) -> tuple[float, str]:
    m = _RE.match(text.strip())
    if not m:
        raise ValueError(f"cannot parse quantity {text!r}")
    return float(m.group(1)), m.group(2).lower()


def parse_size(text: str | int | float) -> int:
    """Parse ``"2MiB"``, ``"1.5 MB"`` or a bare byte count into bytes."""
    if isinstance(text, (int, float)):
        return int(text)
    value, unit = _split(text)
    if unit not in _SIZE_UNITS:
        raise ValueError(f"unknown size unit in {text!r}")
    return int(round(value * _SIZE_UNITS[unit]))


def parse_duration(text: str | int | float) -> float:
    """Parse ``"156.25us"``, ``"10ms"`` or bare seconds into seconds."""
    if isinstance(text, (int, float)):
        return float(text)
    value, unit = _split(text)
    if unit not in _TIME_UNITS:
        raise ValueError(f"unknown time unit in {text!r}")
    return value * _TIME_UNITS[unit]


def parse_rate(text: str | int | float) -> float:
    """Parse a bandwidth such as ``"204.8GB/s"`` into bytes per second."""
    if isinstance(text, (int, float)):
        return float(text)
    value, unit = _split(text)
    unit = unit.removesuffix("/s")
    if unit not in _SIZE_UNITS:
        raise ValueError(f"unknown rate unit in {text!r}")
    return value * _SIZE_UNITS[unit]


def format_size(nbytes: int) -> str:
    for unit, scale in (("GiB", GiB), ("MiB", MiB), ("KiB", KiB)):
        if nbytes >= scale and nbytes % (scale // 1024 or 1) == 0:
            return f"{nbytes / scale:g}{unit}"
    return f"{nbytes}B"


def format_duration(seconds: float) -> str:
    if seconds == 0:
        return "0s"
    for unit, scale in (("s", 1.0), ("ms", 1e-3), ("us", 1e-6)):
        if abs(seconds) >= scale:
            return f"{seconds / scale:.12g}{unit}"
    return f"{seconds / 1e-9:.12g}ns"
