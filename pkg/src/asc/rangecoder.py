"""Byte-oriented range coder over a fixed frequency table.

32-bit range with carry propagation through a cache of pending 0xFF
bytes (the classic arrangement), so the only structural overhead is the
five flush bytes; everything else is the frequency-quantization loss.
The frequency table must sum to FREQ_TOTAL (2^16).
"""

from __future__ import annotations

import bisect

import numpy as np

from .errors import DecodeError

TOP = 1 << 24
MASK32 = (1 << 32) - 1

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS


def quantize_pmf(pmf: np.ndarray, total: int = FREQ_TOTAL) -> np.ndarray:
    """Scale a pmf to integer frequencies summing exactly to ``total``.

    Every symbol keeps frequency >= 1 so it stays codable.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 1 or pmf.size < 1:
        raise ValueError("pmf must be a non-empty 1-D array")
    if pmf.size > total // 2:
        raise ValueError("alphabet too large for the frequency precision")
    freq = np.maximum(1, np.round(pmf * total).astype(np.int64))
    excess = int(freq.sum()) - total
    # Settle the rounding excess against the largest bins, which absorb it
    # with the least relative distortion.
    order = np.argsort(freq)[::-1]
    i = 0
    while excess != 0:
        j = order[i % freq.size]
        if excess > 0 and freq[j] > 1:
            take = min(excess, int(freq[j]) - 1)
            freq[j] -= take
            excess -= take
        elif excess < 0:
            freq[j] -= excess
            excess = 0
        i += 1
    return freq


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0  # may exceed 32 bits transiently; the excess is the carry
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self._out = bytearray()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            self._out.append((self.cache + carry) & 0xFF)
            filler = (0xFF + carry) & 0xFF
            for _ in range(self.cache_size - 1):
                self._out.append(filler)
            self.cache_size = 0
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & MASK32

    def encode(self, cum: int, freq: int, total: int = FREQ_TOTAL) -> None:
        r = self.range // total
        self.low += r * cum
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self.range = MASK32
        self.code = 0
        self._next_byte()  # the encoder's initial zero cache byte
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise DecodeError("range-coded stream truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_target(self, total: int = FREQ_TOTAL) -> int:
        """Cumulative-frequency position of the next symbol."""
        r = self.range // total
        return min(self.code // r, total - 1)

    def consume(self, cum: int, freq: int, total: int = FREQ_TOTAL) -> None:
        r = self.range // total
        self.code -= r * cum
        self.range = r * freq
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & MASK32
            self.range <<= 8


def encode_symbols(symbols: np.ndarray, freq: np.ndarray) -> bytes:
    """Range-encode integer symbols under the given frequency table."""
    cumfreq = np.concatenate(([0], np.cumsum(freq)))
    total = int(cumfreq[-1])
    enc = RangeEncoder()
    cums = cumfreq[symbols].tolist()
    freqs = freq[symbols].tolist()
    for c, f in zip(cums, freqs):
        enc.encode(int(c), int(f), total)
    return enc.finish()


def decode_symbols(data: bytes, count: int, freq: np.ndarray) -> np.ndarray:
    """Decode ``count`` symbols; raises DecodeError on truncated input."""
    cumfreq = np.concatenate(([0], np.cumsum(freq)))
    total = int(cumfreq[-1])
    dec = RangeDecoder(data)
    out = np.empty(count, dtype=np.int64)
    cum_list = cumfreq.tolist()
    freq_list = freq.tolist()
    for i in range(count):
        target = dec.decode_target(total)
        # Rightmost bin whose cumulative start is <= target.
        sym = bisect.bisect_right(cum_list, target) - 1
        dec.consume(cum_list[sym], freq_list[sym], total)
        out[i] = sym
    return out
