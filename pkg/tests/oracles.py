"""Reference implementations used only by the tests.

They are deliberately naive and share no code with the package.
"""
from __future__ import annotations

from fractions import Fraction
from itertools import combinations


def bits_of_bytes(data: bytes) -> list[int]:
    return [int(c) for byte in data for c in format(byte, "08b")]


def hamming_fraction(a, b) -> Fraction:
    return Fraction(sum(x != y for x, y in zip(a, b)), len(a))


def _decisive(v: float, gamma: float) -> int | None:
    if v > gamma:
        return 0
    if v < -gamma:
        return 1
    return None


def _state_after(values, k: int, gamma: float, mode: str) -> int:
    # memory after epoch k is set by the latest decisive epoch at or before k
    for j in range(k, -1, -1):
        d = _decisive(values[j], gamma)
        if d is not None:
            return d if mode == "standard_hysteresis" else 1 - d
    return 0


def reference_decode(values, gamma: float, mode: str, R: int) -> list[int]:
    symbols = []
    for i, v in enumerate(values):
        d = _decisive(v, gamma)
        symbols.append(d if d is not None else (_state_after(values, i - 1, gamma, mode) if i else 0))
    bits = []
    for g in range(len(values) // R):
        ones = sum(symbols[g * R : (g + 1) * R])
        if 2 * ones > R:
            bits.append(1)
        elif 2 * ones < R:
            bits.append(0)
        else:
            bits.append(_state_after(values, g * R + R - 1, gamma, mode))
    return bits


def prefix_means(xs) -> list[Fraction]:
    out, total = [], Fraction(0)
    for i, x in enumerate(xs, 1):
        total += Fraction(x)
        out.append(total / i)
    return out


def brute_force_feasible(rates: dict, ceilings: dict, total: float, rel: float = 1e-9) -> bool:
    """Every subset of flows fits in the total and no flow beats its ceiling."""
    names = list(rates)
    for n in names:
        if rates[n] < 0 or rates[n] > ceilings[n] * (1 + rel):
            return False
    for k in range(1, len(names) + 1):
        for combo in combinations(names, k):
            if sum(rates[n] for n in combo) > total * (1 + rel):
                return False
    return True


def fully_inside(bit: int, R: int, T: Fraction, skew: Fraction) -> int:
    lo, hi = bit * R * T, (bit + 1) * R * T
    return sum(1 for j in range(R) if lo <= (bit * R + j) * T + skew and (bit * R + j + 1) * T + skew <= hi)


def capacity(time_tx, slowdown) -> Fraction:
    return 1 / (Fraction(time_tx) * Fraction(slowdown))
