"""Synthetic multipath OFDM downlink channels for a uniform linear array.

Subcarrier ``n`` (1-based) of a realization is

    h_n = sqrt(n_t / L) * sum_l alpha_l * exp(-j 2 pi tau_l f_s n / n_c) * a(phi_l)

with alpha_l ~ CN(0, sigma_alpha^2), tau_l ~ U[0, delay_spread] and
phi_l ~ U(aod_range), drawn independently per path and per sample.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"CSID"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHHHI")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelGenConfig:
    n_c: int = 256
    n_t: int = 32
    paths: int = 8
    f_s: float = 20e6
    delay_spread: float = 1e-6
    sigma_alpha_sq: float = 1.0
    d_over_lambda: float = 0.5
    aod_range: tuple[float, float] = (-math.pi / 3, math.pi / 3)
    seed: int = 0

    def __post_init__(self):
        if self.n_c < 1 or self.n_t < 1:
            raise ValueError("n_c and n_t must be positive")
        if self.paths < 1:
            raise ValueError("need at least one path")
        if self.f_s <= 0:
            raise ValueError("sampling rate must be positive")
        if self.delay_spread < 0:
            raise ValueError("delay spread must be non-negative")
        if self.sigma_alpha_sq < 0:
            raise ValueError("path power must be non-negative")
        if self.d_over_lambda <= 0:
            raise ValueError("antenna spacing must be positive")
        lo, hi = self.aod_range
        if not (-math.pi / 2 < lo <= hi < math.pi / 2):
            raise ValueError("angle-of-departure range must lie inside (-pi/2, pi/2)")


def spacing_preserving_fs(n_c: int, reference: ChannelGenConfig | None = None) -> float:
    """Sampling rate that keeps the reference subcarrier spacing at ``n_c`` bins."""
    ref = reference or ChannelGenConfig()
    return ref.f_s * n_c / ref.n_c


def desk_config(**overrides) -> ChannelGenConfig:
    """Default scenario at the reduced 64 x 16 training size.

    The sampling rate shrinks with n_c so that the subcarrier spacing, and with
    it the frequency correlation of the default 256-subcarrier scenario, is kept.
    """
    n_c = overrides.pop("n_c", 64)
    base = {"n_c": n_c, "n_t": 16, "f_s": spacing_preserving_fs(n_c)}
    return ChannelGenConfig(**{**base, **overrides})


def ula_response(phi, n_t: int, d_over_lambda: float = 0.5) -> np.ndarray:
    """ULA steering vector(s); a trailing axis of length ``n_t`` is appended."""
    if n_t < 1:
        raise ValueError("n_t must be positive")
    k = np.arange(n_t)
    phase = -2j * np.pi * d_over_lambda * np.multiply.outer(np.sin(phi), k)
    return np.exp(phase)


def channel_from_paths(alpha, tau, phi, n_c: int, n_t: int, f_s: float,
                       d_over_lambda: float = 0.5) -> np.ndarray:
    """Channel matrices from explicit path parameters.

    ``alpha``, ``tau`` and ``phi`` share a shape (..., L); the result has
    shape (..., n_c, n_t).
    """
    alpha = np.asarray(alpha, dtype=np.complex128)
    tau = np.asarray(tau, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    paths = alpha.shape[-1]
    n = np.arange(1, n_c + 1)
    delay = np.exp(-2j * np.pi * f_s / n_c * tau[..., :, None] * n)  # (..., L, n_c)
    steer = ula_response(phi, n_t, d_over_lambda)  # (..., L, n_t)
    h = np.einsum("...l,...ln,...lt->...nt", alpha, delay, steer)
    return math.sqrt(n_t / paths) * h


def _draw_paths(cfg: ChannelGenConfig, rng: np.random.Generator, count: int):
    shape = (count, cfg.paths)
    scale = math.sqrt(cfg.sigma_alpha_sq / 2)
    alpha = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    tau = rng.uniform(0.0, cfg.delay_spread, shape)
    phi = rng.uniform(cfg.aod_range[0], cfg.aod_range[1], shape)
    return alpha, tau, phi


def generate_channel(cfg: ChannelGenConfig, rng: np.random.Generator) -> np.ndarray:
    """One (n_c, n_t) complex channel realization."""
    return generate_channels(cfg, 1, rng)[0]


def generate_channels(cfg: ChannelGenConfig, count: int,
                      rng: np.random.Generator | None = None,
                      chunk: int = 1024) -> np.ndarray:
    """``count`` realizations as complex64, reproducible from ``cfg.seed``."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    out = np.empty((count, cfg.n_c, cfg.n_t), dtype=np.complex64)
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        alpha, tau, phi = _draw_paths(cfg, rng, stop - start)
        out[start:stop] = channel_from_paths(
            alpha, tau, phi, cfg.n_c, cfg.n_t, cfg.f_s, cfg.d_over_lambda
        )
    return out


@dataclass
class Dataset:
    samples: np.ndarray  # (count, n_c, n_t) complex64
    n_c: int = field(init=False)
    n_t: int = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex64)
        if self.samples.ndim != 3:
            raise ValueError(f"samples must be (count, n_c, n_t), got {self.samples.shape}")
        _, self.n_c, self.n_t = self.samples.shape
        if not np.all(np.isfinite(self.samples.view(np.float32))):
            raise ValueError("dataset contains non-finite entries")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def header(self) -> tuple[int, int, int]:
        return self.n_c, self.n_t, len(self)


def write_dataset(ds: Dataset, path) -> None:
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n_c, ds.n_t, len(ds))
    body = np.ascontiguousarray(ds.samples, dtype="<c8").tobytes()
    Path(path).write_bytes(header + body)


def read_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    return dataset_from_bytes(data, source=str(path))


def dataset_from_bytes(data: bytes, source: str = "<bytes>") -> Dataset:
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, n_c, n_t, count = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{source}: unsupported dataset version {version}")
    expected = _HEADER.size + count * n_c * n_t * 8
    if len(data) != expected:
        raise DatasetFormatError(
            f"{source}: expected {expected} bytes for {count} samples of {n_c}x{n_t}, "
            f"found {len(data)}"
        )
    samples = np.frombuffer(data, "<c8", offset=_HEADER.size).reshape(count, n_c, n_t)
    return Dataset(samples.astype(np.complex64))
