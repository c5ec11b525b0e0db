from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mc3.bitstream import (
    Bitstream,
    best_alignment,
    bit_error_rate,
    decode_text,
    encode_text,
    generate_pattern,
    parse_pattern,
)
from mc3.errors import LengthMismatch, NonByteAlignedLength

from oracles import bits_of_bytes, hamming_fraction

bit_lists = st.lists(st.integers(0, 1), max_size=200)


def test_encode_empty():
    assert len(encode_text(b"")) == 0


def test_encode_single_byte_msb_first():
    assert str(encode_text(b"H")) == "01001000"
    assert decode_text(Bitstream.from_str("01001000")) == b"H"


def test_hello_world_matches_reference():
    bits = encode_text("Hello, World")
    assert len(bits) == 96
    assert list(bits) == bits_of_bytes(b"Hello, World")
    assert decode_text(bits) == b"Hello, World"


def test_decode_empty():
    assert decode_text(Bitstream()) == b""


def test_decode_rejects_partial_byte():
    with pytest.raises(NonByteAlignedLength):
        decode_text(Bitstream.from_str("0101"))


def test_bitstream_rejects_non_binary():
    with pytest.raises(ValueError):
        Bitstream((0, 2))


@given(st.binary(max_size=64))
def test_text_round_trip(data):
    assert decode_text(encode_text(data)) == data
    assert list(encode_text(data)) == bits_of_bytes(data)


@given(st.lists(st.integers(0, 1), min_size=256, max_size=256))
def test_random_bits_reencode(bits):
    assert list(encode_text(decode_text(bits))) == bits


def test_patterns():
    assert str(generate_pattern("alternating", 4)) == "0101"
    assert str(generate_pattern("all_one", 3)) == "111"
    assert str(generate_pattern("all_zero", 2)) == "00"
    b = generate_pattern("balanced_random", 1024, seed=7)
    assert b.ones() == 512 and len(b) == 1024
    assert generate_pattern("balanced_random", 1024, seed=7) == b
    assert generate_pattern("balanced_random", 1024, seed=8) != b


@given(st.integers(0, 500), st.integers(0, 2**32))
def test_balanced_counts(n, seed):
    b = generate_pattern("balanced_random", n, seed)
    assert len(b) == n and b.ones() == n // 2


def test_parse_pattern_forms():
    assert str(parse_pattern("alternating:8")) == "01010101"
    assert str(parse_pattern("bits:1101")) == "1101"
    assert parse_pattern("text:H") == encode_text(b"H")
    assert parse_pattern("balanced:1024").ones() == 512
    with pytest.raises(ValueError):
        parse_pattern("nonsense:3")


def test_ber_examples():
    assert bit_error_rate(Bitstream.from_str("0101"), Bitstream.from_str("0101")) == 0.0
    assert bit_error_rate(Bitstream.from_str("0000"), Bitstream.from_str("1111")) == 1.0
    sent = generate_pattern("balanced_random", 1024, seed=1)
    flipped = list(sent)
    for i in range(0, 1000, 100):
        flipped[i] ^= 1
    assert bit_error_rate(sent, flipped) == 10 / 1024


def test_ber_length_mismatch():
    with pytest.raises(LengthMismatch):
        bit_error_rate([0, 1], [0])


@given(bit_lists, st.data())
def test_ber_properties(a, data):
    b = data.draw(st.lists(st.integers(0, 1), min_size=len(a), max_size=len(a)))
    ber = bit_error_rate(a, b)
    assert 0.0 <= ber <= 1.0
    assert ber == bit_error_rate(b, a)
    assert bit_error_rate(a, a) == 0.0
    if a:
        assert ber == float(hamming_fraction(a, b))


def test_best_alignment_finds_shift():
    sent = list(generate_pattern("balanced_random", 200, seed=3))
    received = [0, 0] + sent[:-2]
    shift, ber = best_alignment(sent, received)
    assert shift == 2 and ber == 0.0
