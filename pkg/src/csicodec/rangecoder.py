"""Multi-symbol range coder with 16-bit cumulative frequency tables.

The coder keeps a 64-bit ``low`` register plus a carry bit and emits whole
bytes, propagating carries through a cached byte and a run of pending 0xFF
bytes.  Termination writes the shortest byte string that pins the final
interval; the decoder reads zero bytes past the end of its input, so
trailing zeros are stripped from the payload.
"""

from __future__ import annotations

PRECISION = 16
TOTAL = 1 << PRECISION

_TOP = 1 << 64
_BOT = 1 << 56
_MASK = _TOP - 1
_FF_FLOOR = 0xFF << 56


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = _TOP
        self._cache: int | None = None
        self._pending = 0
        self._out = bytearray()

    def encode(self, cum: int, freq: int) -> None:
        """Narrow the interval to [cum, cum + freq) out of ``TOTAL``."""
        r = self.range >> PRECISION
        self.low += r * cum
        if cum + freq == TOTAL:
            self.range -= r * cum
        else:
            self.range = r * freq
        while self.range < _BOT:
            self.range <<= 8
            self._shift_low()

    def encode_raw(self, value: int, bits: int = 32) -> None:
        """Uniformly coded unsigned integer, 16 bits at a time."""
        for shift in range(bits - PRECISION, -1, -PRECISION):
            self.encode((value >> shift) & (TOTAL - 1), 1)

    def _shift_low(self) -> None:
        low = self.low
        if low < _FF_FLOOR or low >= _TOP:
            carry = low >> 64
            if self._cache is not None:
                self._out.append((self._cache + carry) & 0xFF)
            if self._pending:
                self._out += bytes([(0xFF + carry) & 0xFF]) * self._pending
                self._pending = 0
            self._cache = (low >> 56) & 0xFF
        else:
            self._pending += 1
        self.low = (low << 8) & _MASK

    def finish(self) -> bytes:
        low, high = self.low, self.low + self.range
        # value inside [low, high) with the most trailing zero bits
        for bits in range(65, -1, -1):
            mask = (1 << bits) - 1
            value = (low + mask) & ~mask
            if value < high:
                break
        self.low = value
        for _ in range(9):
            self._shift_low()
        return bytes(self._out).rstrip(b"\x00")


class RangeDecoder:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0
        self.range = _TOP
        self.code = 0
        self._r = 0
        for _ in range(8):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self._pos
        self._pos = pos + 1
        return self._data[pos] if pos < len(self._data) else 0

    @property
    def bytes_read(self) -> int:
        return self._pos

    def target(self) -> int:
        """Cumulative frequency the next symbol's interval must contain."""
        self._r = self.range >> PRECISION
        t = self.code // self._r
        return t if t < TOTAL else TOTAL - 1

    def consume(self, cum: int, freq: int) -> None:
        r = self._r
        self.code -= r * cum
        if cum + freq == TOTAL:
            self.range -= r * cum
        else:
            self.range = r * freq
        while self.range < _BOT:
            self.code = (self.code << 8) | self._next_byte()
            self.range <<= 8

    def decode_raw(self, bits: int = 32) -> int:
        value = 0
        for _ in range(bits // PRECISION):
            chunk = self.target()
            self.consume(chunk, 1)
            value = (value << PRECISION) | chunk
        return value
