"""Covert channel over shared memory-bandwidth contention, with a simulated memory system."""
from __future__ import annotations

from .bitstream import Bitstream, bit_error_rate, decode_text, encode_text, generate_pattern
from .txrx import ChannelConfig, decode_trace, decode_values, run_session

__version__ = "0.1.0"

__all__ = [
    "Bitstream",
    "ChannelConfig",
    "bit_error_rate",
    "decode_text",
    "decode_trace",
    "decode_values",
    "encode_text",
    "generate_pattern",
    "run_session",
]
