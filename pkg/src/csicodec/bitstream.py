"""Framing of one compressed channel matrix.

Little-endian layout::

    magic "CMC1" | version u8 | lambda-id u16 | n_c u16 | n_t u16 |
    payload length u32 | payload | symbol checksum u32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"CMC1"
VERSION = 1
_HEAD = struct.Struct("<4sBHHHI")
_TAIL = struct.Struct("<I")

LAMBDA_ID_BITS = 16
CHECKSUM_BITS = 8 * _TAIL.size
# magic, version, n_c, n_t and payload length: everything but the lambda id
FIXED_HEADER_BITS = 8 * _HEAD.size - LAMBDA_ID_BITS


class BitstreamError(ValueError):
    pass


@dataclass(frozen=True)
class Bitstream:
    lambda_id: int
    n_c: int
    n_t: int
    payload: bytes
    checksum: int

    def __post_init__(self):
        for name in ("lambda_id", "n_c", "n_t"):
            v = getattr(self, name)
            if not 0 <= v < 1 << 16:
                raise BitstreamError(f"{name}={v} does not fit in 16 bits")

    def to_bytes(self) -> bytes:
        head = _HEAD.pack(MAGIC, VERSION, self.lambda_id, self.n_c, self.n_t, len(self.payload))
        return head + self.payload + _TAIL.pack(self.checksum)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEAD.size + _TAIL.size:
            raise BitstreamError(f"stream of {len(data)} bytes is shorter than its framing")
        magic, version, lambda_id, n_c, n_t, length = _HEAD.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported bitstream version {version}")
        end = _HEAD.size + length
        if len(data) != end + _TAIL.size:
            raise BitstreamError(
                f"payload length field says {length} bytes but stream holds "
                f"{len(data) - _HEAD.size - _TAIL.size}"
            )
        (checksum,) = _TAIL.unpack_from(data, end)
        return cls(lambda_id, n_c, n_t, bytes(data[_HEAD.size:end]), checksum)

    @property
    def dims(self) -> int:
        return self.n_c * self.n_t

    @property
    def bit_rate(self) -> float:
        """(lambda id + payload bits) per channel dimension."""
        return (LAMBDA_ID_BITS + 8 * len(self.payload)) / self.dims

    @property
    def payload_bit_rate(self) -> float:
        return 8 * len(self.payload) / self.dims

    @property
    def framed_bit_rate(self) -> float:
        """Every byte of the serialized stream, per channel dimension.

        Equals (16 + 8 * payload bytes + 32 + FIXED_HEADER_BITS) / (n_c * n_t).
        """
        return (LAMBDA_ID_BITS + 8 * len(self.payload) + CHECKSUM_BITS + FIXED_HEADER_BITS) / self.dims
