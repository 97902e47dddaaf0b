"""Compression of channel matrices with a trained checkpoint, and RD evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitstream import Bitstream
from .checkpoint import ModelCheckpoint
from .entropy import entropy_decode, entropy_encode, quantize, symbol_checksum
from .metrics import cosine_corr, nmse
from .network import ShapeError, feature_decode, feature_encode

PAD_POLICIES = ("reject", "zero")
CSV_COLUMNS = ("lambda", "bit_rate", "entropy", "nmse_db", "rho")


def ceil16(n: int) -> int:
    return -(-n // 16) * 16


@dataclass(frozen=True)
class PadRecord:
    """Zero rows (subcarriers) and columns (antennas) appended by :func:`pad_to_16`."""
    n_c: int
    n_t: int
    rows: int = 0
    cols: int = 0

    @property
    def empty(self) -> bool:
        return self.rows == 0 and self.cols == 0


def pad_to_16(h: np.ndarray, policy: str = "zero") -> tuple[np.ndarray, PadRecord]:
    """Append zero subcarriers/antennas so both trailing dims are multiples of 16."""
    if policy not in PAD_POLICIES:
        raise ValueError(f"unknown pad policy {policy!r}; choose from {PAD_POLICIES}")
    h = np.asarray(h)
    n_c, n_t = h.shape[-2:]
    rows, cols = ceil16(n_c) - n_c, ceil16(n_t) - n_t
    record = PadRecord(n_c, n_t, rows, cols)
    if record.empty:
        return h, record
    if policy == "reject":
        raise ShapeError(
            f"{n_c}x{n_t} is not a multiple of 16; pad to {n_c + rows}x{n_t + cols} "
            f"or use the zero pad policy"
        )
    widths = [(0, 0)] * (h.ndim - 2) + [(0, rows), (0, cols)]
    return np.pad(h, widths), record


def crop(h: np.ndarray, record: PadRecord) -> np.ndarray:
    return h[..., :record.n_c, :record.n_t]


def _latent_shape(ckpt: ModelCheckpoint, n_c: int, n_t: int) -> tuple[int, int, int]:
    return ckpt.arch.latent_channels, ceil16(n_c) // 16, ceil16(n_t) // 16


def _stream_from_symbols(q: np.ndarray, ckpt: ModelCheckpoint, n_c: int, n_t: int) -> Bitstream:
    payload = entropy_encode(q, ckpt.tables)
    return Bitstream(ckpt.lambda_id, n_c, n_t, payload, symbol_checksum(q))


def compress(h: np.ndarray, ckpt: ModelCheckpoint, pad: str = "reject") -> Bitstream:
    """Encode one complex (n_c, n_t) matrix; the header keeps the unpadded dims."""
    h = np.asarray(h)
    if h.ndim != 2:
        raise ShapeError(f"compress takes one (n_c, n_t) matrix, got shape {h.shape}")
    padded, record = pad_to_16(h, pad)
    q = quantize(feature_encode(padded, ckpt.model)).astype(np.int64)
    return _stream_from_symbols(q, ckpt, record.n_c, record.n_t)


def decode_symbols(stream: Bitstream, ckpt: ModelCheckpoint) -> np.ndarray:
    """Integer latent (C, h, w) carried by ``stream``; the checksum is verified."""
    if stream.lambda_id != ckpt.lambda_id:
        raise ValueError(
            f"stream was coded with lambda id {stream.lambda_id} but the checkpoint "
            f"holds id {ckpt.lambda_id}"
        )
    shape = _latent_shape(ckpt, stream.n_c, stream.n_t)
    flat = entropy_decode(stream.payload, ckpt.tables, int(np.prod(shape)), stream.checksum)
    return flat.reshape(shape)


def decompress(stream: Bitstream, ckpt: ModelCheckpoint) -> np.ndarray:
    """Reconstructed complex matrix with the dims recorded in the header."""
    q = decode_symbols(stream, ckpt)
    h = feature_decode(q, ckpt.model)
    return crop(h, PadRecord(stream.n_c, stream.n_t))


def reconstruct(h: np.ndarray, ckpt: ModelCheckpoint, quantized: bool = True) -> np.ndarray:
    """Encoder-side reconstruction without entropy coding.

    With ``quantized=False`` the rounding step is skipped as well, which gives
    the plain autoencoder output.
    """
    padded, record = pad_to_16(h, "zero")
    m = feature_encode(padded, ckpt.model)
    if quantized:
        m = quantize(m)
    return crop(feature_decode(m, ckpt.model), record)


@dataclass
class RdPoint:
    lambda_value: float
    bit_rate: float
    entropy: float
    nmse_db: float
    rho: float
    lambda_id: int = -1
    payload_bit_rate: float = float("nan")
    framed_bit_rate: float = float("nan")

    def row(self) -> dict:
        return {
            "lambda": f"{self.lambda_value:g}",
            "bit_rate": f"{self.bit_rate:.6f}",
            "entropy": f"{self.entropy:.6f}",
            "nmse_db": f"{self.nmse_db:.4f}",
            "rho": f"{self.rho:.6f}",
        }


def evaluate(ckpt: ModelCheckpoint, samples: np.ndarray, pad: str = "zero",
             batch: int = 64) -> RdPoint:
    """Compress and decompress every sample; rates and metrics are test-set means.

    ``entropy`` is the ideal code length of the quantized latents under the
    coding tables, in bits per channel dimension.
    """
    samples = np.asarray(samples)
    if samples.ndim != 3 or len(samples) == 0:
        raise ValueError(f"need a non-empty (count, n_c, n_t) set, got shape {samples.shape}")
    padded, record = pad_to_16(samples, pad)
    dims = record.n_c * record.n_t
    rates = np.zeros((len(samples), 3))
    ideal = np.zeros(len(samples))
    recon = np.empty(samples.shape, dtype=np.complex64)
    for start in range(0, len(samples), batch):
        q = quantize(feature_encode(padded[start:start + batch], ckpt.model)).astype(np.int64)
        decoded = np.empty_like(q)
        for j, qj in enumerate(q):
            i = start + j
            stream = Bitstream.from_bytes(
                _stream_from_symbols(qj, ckpt, record.n_c, record.n_t).to_bytes()
            )
            rates[i] = stream.bit_rate, stream.payload_bit_rate, stream.framed_bit_rate
            ideal[i] = ckpt.tables.ideal_bits(qj) / dims
            decoded[j] = decode_symbols(stream, ckpt)
        recon[start:start + len(q)] = crop(feature_decode(decoded, ckpt.model), record)
    bit_rate, payload_rate, framed_rate = rates.mean(axis=0)
    return RdPoint(
        lambda_value=ckpt.lambda_value,
        bit_rate=float(bit_rate),
        entropy=float(ideal.mean()),
        nmse_db=nmse(samples, recon),
        rho=cosine_corr(samples, recon),
        lambda_id=ckpt.lambda_id,
        payload_bit_rate=float(payload_rate),
        framed_bit_rate=float(framed_rate),
    )


def rd_sweep(checkpoints, samples: np.ndarray, pad: str = "zero") -> list[RdPoint]:
    """One :class:`RdPoint` per checkpoint, ordered by lambda."""
    checkpoints = list(checkpoints)
    if checkpoints:
        arch = checkpoints[0].arch
        for c in checkpoints[1:]:
            if c.arch != arch:
                raise ValueError("checkpoints in a sweep must share one architecture")
    points = [evaluate(c, samples, pad) for c in checkpoints]
    return sorted(points, key=lambda p: p.lambda_value)


def write_rd_csv(points, path=None) -> str:
    """CSV text with columns lambda,bit_rate,entropy,nmse_db,rho; written if ``path``."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for p in points:
        writer.writerow(p.row())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
