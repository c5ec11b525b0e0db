"""Message framing: bytes <-> bit sequences, test patterns and bit error rate.

Text is encoded 8 bits per byte, most-significant bit first. There is no
preamble or error-correcting layer; the channel carries raw bits.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import LengthMismatch, NonByteAlignedLength

PATTERN_KINDS = ("alternating", "balanced_random", "all_zero", "all_one")


@dataclass(frozen=True)
class Bitstream:
    """Immutable ordered sequence of 0/1 symbols."""

    bits: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        bits = tuple(self.bits)
        for b in bits:
            if b != 0 and b != 1:
                raise ValueError(f"bitstream symbols must be 0 or 1, got {b!r}")
        object.__setattr__(self, "bits", tuple(int(b) for b in bits))

    @classmethod
    def from_str(cls, text: str) -> Bitstream:
        text = "".join(text.split())
        if set(text) - {"0", "1"}:
            raise ValueError("bit string may only contain '0' and '1'")
        return cls(tuple(int(c) for c in text))

    @property
    def length(self) -> int:
        return len(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self) -> Iterator[int]:
        return iter(self.bits)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Bitstream(self.bits[idx])
        return self.bits[idx]

    def __add__(self, other: Bitstream) -> Bitstream:
        return Bitstream(self.bits + tuple(other))

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)

    def ones(self) -> int:
        return sum(self.bits)


def encode_text(text: bytes | str) -> Bitstream:
    if isinstance(text, str):
        text = text.encode("utf-8")
    bits = []
    for byte in text:
        for shift in range(7, -1, -1):
            bits.append((byte >> shift) & 1)
    return Bitstream(tuple(bits))


def decode_text(bits: Bitstream | Sequence[int]) -> bytes:
    bits = tuple(bits)
    if len(bits) % 8:
        raise NonByteAlignedLength(f"bit count {len(bits)} is not a multiple of 8")
    out = bytearray()
    for i in range(0, len(bits), 8):
        byte = 0
        for b in bits[i : i + 8]:
            byte = (byte << 1) | b
        out.append(byte)
    return bytes(out)


def generate_pattern(kind: str, n: int, seed: int = 0) -> Bitstream:
    """Build a test bitstream of ``n`` bits.

    ``balanced_random`` places exactly ``n // 2`` ones at seeded random
    positions, so the same seed always yields the same stream.
    """
    if n < 0:
        raise ValueError("pattern length must be non-negative")
    if kind == "alternating":
        return Bitstream(tuple(i % 2 for i in range(n)))
    if kind == "all_zero":
        return Bitstream((0,) * n)
    if kind == "all_one":
        return Bitstream((1,) * n)
    if kind == "balanced_random":
        bits = [1] * (n // 2) + [0] * (n - n // 2)
        random.Random(seed).shuffle(bits)
        return Bitstream(tuple(bits))
    raise ValueError(f"unknown pattern kind {kind!r}; expected one of {PATTERN_KINDS}")


_PATTERN_ALIASES = {
    "alternating": "alternating",
    "alt": "alternating",
    "balanced": "balanced_random",
    "balanced_random": "balanced_random",
    "random": "balanced_random",
    "zeros": "all_zero",
    "all_zero": "all_zero",
    "ones": "all_one",
    "all_one": "all_one",
}


def parse_pattern(spec: str, default_seed: int = 7) -> Bitstream:
    """Parse ``kind:n[:seed]`` (e.g. ``balanced:1024``), ``bits:0101`` or ``text:...``."""
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "text":
        return encode_text(rest)
    if kind == "bits":
        return Bitstream.from_str(rest)
    if kind not in _PATTERN_ALIASES:
        raise ValueError(f"unknown pattern {spec!r}")
    count, _, seed = rest.partition(":")
    if not count:
        raise ValueError(f"pattern {spec!r} needs a bit count")
    return generate_pattern(_PATTERN_ALIASES[kind], int(count), int(seed) if seed else default_seed)


def bit_error_rate(sent: Iterable[int], received: Iterable[int]) -> float:
    """Positional Hamming distance divided by length (no realignment)."""
    sent, received = tuple(sent), tuple(received)
    if len(sent) != len(received):
        raise LengthMismatch(f"sent has {len(sent)} bits, received has {len(received)}")
    if not sent:
        return 0.0
    errors = sum(1 for a, b in zip(sent, received) if a != b)
    return errors / len(sent)


def best_alignment(sent: Sequence[int], received: Sequence[int], max_shift: int = 8) -> tuple[int, float]:
    """Return the shift of ``received`` (within ``±max_shift``) minimising BER over the overlap.

    This is an analysis helper for desynchronised sessions; the headline metric
    stays :func:`bit_error_rate`.
    """
    best = (0, 1.0)
    for shift in range(-max_shift, max_shift + 1):
        if shift >= 0:
            a, b = sent[: len(sent) - shift], received[shift:]
        else:
            a, b = sent[-shift:], received[: len(received) + shift]
        n = min(len(a), len(b))
        if n == 0:
            continue
        ber = sum(1 for x, y in zip(a[:n], b[:n]) if x != y) / n
        if ber < best[1] or (ber == best[1] and abs(shift) < abs(best[0])):
            best = (shift, ber)
    return best
