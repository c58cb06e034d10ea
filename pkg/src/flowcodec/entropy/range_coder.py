"""Byte-oriented carry-less range coder (32-bit state).

The coder works on integer cumulative-frequency tables: a table for an
n-symbol alphabet is an array ``cum`` of n+1 non-decreasing integers with
``cum[0] == 0`` and ``cum[n] == total <= 2**16``, every symbol having
frequency >= 1. Encoder and decoder renormalize in lock-step, emitting or
consuming one byte at a time, so `decode(encode(s)) == s` exactly for any
valid tables. The flush costs 4 bytes; total overhead stays below 6 bytes.
"""

from __future__ import annotations

import numpy as np

_PRECISION = 32
_TOP = 1 << (_PRECISION - 8)
_BOTTOM = 1 << (_PRECISION - 16)
_MASK = (1 << _PRECISION) - 1

MAX_TOTAL = _BOTTOM  # largest admissible cum[-1]


class RangeCoderError(ValueError):
    pass


def _check_interval(cum_lo: int, cum_hi: int, total: int) -> None:
    if not 0 <= cum_lo < cum_hi <= total:
        raise RangeCoderError(f"invalid cumulative interval [{cum_lo}, {cum_hi}) of total {total}")
    if total > MAX_TOTAL:
        raise RangeCoderError(f"table total {total} exceeds {MAX_TOTAL}")


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK
        self._out = bytearray()

    def encode(self, cum_lo: int, cum_hi: int, total: int) -> None:
        _check_interval(cum_lo, cum_hi, total)
        r = self._range // total
        self._low = (self._low + cum_lo * r) & _MASK
        self._range = (cum_hi - cum_lo) * r
        self._normalize()

    def _normalize(self) -> None:
        low, rng = self._low, self._range
        while (low ^ (low + rng)) < _TOP or rng < _BOTTOM:
            if (low ^ (low + rng)) >= _TOP:
                # top bytes differ but the range is tiny: pin it to the byte
                # boundary so a byte can still be released
                rng = (_MASK + 1 - low) & (_BOTTOM - 1)
            self._out.append((low >> (_PRECISION - 8)) & 0xFF)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self._low, self._range = low, rng

    def finish(self) -> bytes:
        low = self._low
        for _ in range(_PRECISION // 8):
            self._out.append((low >> (_PRECISION - 8)) & 0xFF)
            low = (low << 8) & _MASK
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = _MASK
        self._code = 0
        for _ in range(_PRECISION // 8):
            self._code = ((self._code << 8) | self._next_byte()) & _MASK

    def _next_byte(self) -> int:
        # reads past the declared end decode to zeros; stream integrity is
        # enforced by the bitstream checksum, not here
        if self._pos < len(self._data):
            b = self._data[self._pos]
            self._pos += 1
            return b
        self._pos += 1
        return 0

    @property
    def bytes_consumed(self) -> int:
        return min(self._pos, len(self._data))

    def decode_target(self, total: int) -> int:
        """Value in [0, total) locating the next symbol's cumulative bin."""
        if total > MAX_TOTAL:
            raise RangeCoderError(f"table total {total} exceeds {MAX_TOTAL}")
        r = self._range // total
        target = (self._code - self._low) & _MASK
        return min(target // r, total - 1)

    def advance(self, cum_lo: int, cum_hi: int, total: int) -> None:
        _check_interval(cum_lo, cum_hi, total)
        r = self._range // total
        self._low = (self._low + cum_lo * r) & _MASK
        self._range = (cum_hi - cum_lo) * r
        low, rng = self._low, self._range
        while (low ^ (low + rng)) < _TOP or rng < _BOTTOM:
            if (low ^ (low + rng)) >= _TOP:
                rng = (_MASK + 1 - low) & (_BOTTOM - 1)
            self._code = ((self._code << 8) | self._next_byte()) & _MASK
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
        self._low, self._range = low, rng


def encode_symbols(symbols, cum: np.ndarray) -> bytes:
    """Encode integer symbols under one shared cumulative table."""
    enc = RangeEncoder()
    total = int(cum[-1])
    for s in symbols:
        enc.encode(int(cum[s]), int(cum[s + 1]), total)
    return enc.finish()


def decode_symbols(data: bytes, cum: np.ndarray, count: int) -> list[int]:
    """Decode ``count`` symbols encoded with one shared cumulative table."""
    dec = RangeDecoder(data)
    total = int(cum[-1])
    out = []
    for _ in range(count):
        target = dec.decode_target(total)
        s = int(np.searchsorted(cum, target, side="right")) - 1
        dec.advance(int(cum[s]), int(cum[s + 1]), total)
        out.append(s)
    return out
