"""Model checkpoint file.

Little-endian layout::

    magic "CMCK" | version u16
    architecture: width u16 | latent channels u16 | residual kernel u8 |
                  n u8 | encoder kernels u8*n | encoder pools u8*n |
                  n u8 | decoder kernels u8*n | decoder upsamples u8*n |
                  n u8 | prior filters u8*n
    lambda-id u16 | sigma_norm f32 | distortion scale f32
    record count u32, then per record:
        name length u16 | name (utf-8) | rank u8 | dims u32*rank | f32 data
    coding tables: channels u16, then per channel k_min i32 | bins u32 | u16*bins
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .entropy import EntropyModel, FactorizedPrior
from .network import ArchConfig, Autoencoder
from .training import LossTerms, TrainResult, lambda_value

MAGIC = b"CMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    model: Autoencoder
    prior: FactorizedPrior
    tables: EntropyModel
    lambda_id: int
    distortion_scale: float = 0.01
    history: list[LossTerms] = field(default_factory=list)

    def __post_init__(self):
        lambda_value(self.lambda_id)
        if self.tables.channels != self.model.arch.latent_channels:
            raise CheckpointError("coding tables do not match the latent channel count")
        # everything on disk is float32; keep the in-memory model identical
        self.model.sigma_norm = float(np.float32(self.model.sigma_norm))
        self.model.eval()
        self.prior.eval()

    @classmethod
    def from_training(cls, result: TrainResult) -> "ModelCheckpoint":
        return cls(result.model, result.prior, result.tables, result.lambda_id,
                   result.distortion_scale, list(result.history))

    @property
    def arch(self) -> ArchConfig:
        return self.model.arch

    @property
    def lambda_value(self) -> float:
        return lambda_value(self.lambda_id)

    def named_arrays(self):
        for name, p in self.model.named_parameters("model."):
            yield name, p.data
        for name, buf in self.model.named_buffers("model."):
            if buf is None:
                raise CheckpointError(f"{name} is uninitialized; train the model first")
            yield name, buf
        for name, p in self.prior.named_parameters("prior."):
            yield name, p.data

    # -- serialization -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        a = self.arch
        out = bytearray(MAGIC + struct.pack("<H", VERSION))
        out += struct.pack("<HHB", a.width, a.latent_channels, a.residual_kernel)
        for first, second in ((a.encoder_kernels, a.encoder_pools),
                              (a.decoder_kernels, a.decoder_upsamples)):
            out += struct.pack("<B", len(first)) + bytes(first) + bytes(second)
        out += struct.pack("<B", len(self.prior.filters)) + bytes(self.prior.filters)
        out += struct.pack("<Hff", self.lambda_id, self.model.sigma_norm, self.distortion_scale)
        records = list(self.named_arrays())
        out += struct.pack("<I", len(records))
        for name, arr in records:
            raw = name.encode()
            out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        out += self.tables.table_bytes()
        return bytes(out)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        try:
            return _parse(data)
        except (struct.error, ValueError, IndexError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _parse(data: bytes) -> ModelCheckpoint:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {bytes(data[:4])!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 6
    width, latent, res_k = struct.unpack_from("<HHB", data, off)
    off += 5
    pairs = []
    for _ in range(2):
        n = data[off]
        first, second = tuple(data[off + 1:off + 1 + n]), tuple(data[off + 1 + n:off + 1 + 2 * n])
        pairs.append((first, second))
        off += 1 + 2 * n
    n = data[off]
    filters = tuple(data[off + 1:off + 1 + n])
    off += 1 + n
    arch = ArchConfig(width=width, latent_channels=latent, residual_kernel=res_k,
                      encoder_kernels=pairs[0][0], encoder_pools=pairs[0][1],
                      decoder_kernels=pairs[1][0], decoder_upsamples=pairs[1][1])
    lambda_id, sigma, dscale = struct.unpack_from("<Hff", data, off)
    off += 10
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, off)
        name = bytes(data[off + 2:off + 2 + ln]).decode()
        off += 2 + ln
        rank = data[off]
        dims = struct.unpack_from(f"<{rank}I", data, off + 1)
        off += 1 + 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arrays[name] = np.frombuffer(data, "<f4", size, off).reshape(dims).astype(np.float32)
        off += 4 * size
    tables, off = EntropyModel.from_table_bytes(data, off)
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after coding tables")

    model = Autoencoder(arch)
    model.sigma_norm = float(sigma)
    prior = FactorizedPrior(latent, filters)
    expected = dict(model.named_parameters("model."))
    expected.update(prior.named_parameters("prior."))
    buffer_owners = _buffer_owners(model, "model.")
    for name in list(arrays):
        if name in expected:
            p = expected.pop(name)
            if p.data.shape != arrays[name].shape:
                raise CheckpointError(
                    f"{name}: stored shape {arrays[name].shape} does not match "
                    f"architecture shape {p.data.shape}"
                )
            p.data = arrays[name].copy()
            p.grad = np.zeros_like(p.data)
        elif name in buffer_owners:
            owner, attr = buffer_owners.pop(name)
            setattr(owner, attr, arrays[name].copy())
        else:
            raise CheckpointError(f"unexpected record {name!r}")
    missing = sorted(expected) + sorted(buffer_owners)
    if missing:
        raise CheckpointError(f"checkpoint lacks records: {', '.join(missing[:5])}")
    return ModelCheckpoint(model, prior, tables, lambda_id, float(dscale))


def _buffer_owners(module, prefix: str) -> dict:
    owners = {}
    for name in getattr(module, "_buffers", ()):
        owners[prefix + name] = (module, name)
    for attr, value in vars(module).items():
        children = value if isinstance(value, (list, tuple)) else [value]
        for i, child in enumerate(children):
            if hasattr(child, "named_parameters"):
                sub = f"{prefix}{attr}.{i}." if isinstance(value, (list, tuple)) else f"{prefix}{attr}."
                owners.update(_buffer_owners(child, sub))
    return owners
