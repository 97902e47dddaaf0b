"""Fully-convolutional feature encoder and decoder for channel matrices.

A channel matrix H (n_c x n_t, complex) enters the network as a two-plane
real tensor (real, imaginary) divided by a global scale ``sigma_norm``.  The
encoder downsamples by 16 in both directions and emits 256 feature maps, so
the latent holds exactly n_c * n_t values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import (
    DEFAULT_DTYPE,
    AvgPool,
    BatchNorm2d,
    Conv2d,
    Module,
    PReLU,
    Sequential,
    ShapeError,
    Upsample,
)

LATENT_CHANNELS = 256
TOTAL_DOWNSAMPLING = 16


@dataclass(frozen=True)
class ArchConfig:
    width: int = 256
    latent_channels: int = LATENT_CHANNELS
    encoder_kernels: tuple[int, ...] = (9, 5, 5)
    encoder_pools: tuple[int, ...] = (4, 2, 2)
    decoder_kernels: tuple[int, ...] = (5, 5, 9)
    decoder_upsamples: tuple[int, ...] = (2, 2, 4)
    residual_kernel: int = 3

    def __post_init__(self):
        if int(np.prod(self.encoder_pools)) != TOTAL_DOWNSAMPLING:
            raise ValueError("encoder pooling factors must multiply to 16")
        if int(np.prod(self.decoder_upsamples)) != TOTAL_DOWNSAMPLING:
            raise ValueError("decoder upsampling factors must multiply to 16")
        if self.latent_channels != LATENT_CHANNELS:
            raise ValueError("latent must have 256 channels so its size equals n_c * n_t")

    def to_dict(self) -> dict:
        return asdict(self)


def complex_to_planes(h: np.ndarray, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """(…, n_c, n_t) complex -> (…, 2, n_c, n_t) real."""
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=-3).astype(dtype)


def planes_to_complex(x: np.ndarray) -> np.ndarray:
    return (x[..., 0, :, :] + 1j * x[..., 1, :, :]).astype(np.complex64)


def check_dims(n_c: int, n_t: int) -> None:
    bad = [(name, v) for name, v in (("n_c", n_c), ("n_t", n_t)) if v % TOTAL_DOWNSAMPLING]
    if bad:
        need = ", ".join(
            f"{name}={v} needs {-v % TOTAL_DOWNSAMPLING} more" for name, v in bad
        )
        raise ShapeError(f"channel dims must be multiples of 16 (pad first): {need}")


class ResidualBlock(Module):
    """x + bn(conv(prelu(bn(conv(x)))))."""

    def __init__(self, channels: int, kernel_size: int, rng, dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.body = Sequential(
            Conv2d(channels, channels, kernel_size, rng, dtype),
            BatchNorm2d(channels, dtype=dtype),
            PReLU(channels, dtype=dtype),
            Conv2d(channels, channels, kernel_size, rng, dtype),
            BatchNorm2d(channels, dtype=dtype),
        )

    def forward(self, x):
        if x.shape[-3] != self.channels:
            raise ShapeError(
                f"residual block expects {self.channels} channels, got {x.shape[-3]}"
            )
        return x + self.body(x)

    def backward(self, grad_out):
        return grad_out + self.body.backward(grad_out)


class ResidualGroup(Module):
    """Two residual blocks and a closing conv+bn, wrapped by one identity shortcut.

    With every conv weight (and bias) at zero the whole group is the identity.
    """

    def __init__(self, channels: int, kernel_size: int, rng, dtype=DEFAULT_DTYPE):
        self.blocks = [
            ResidualBlock(channels, kernel_size, rng, dtype),
            ResidualBlock(channels, kernel_size, rng, dtype),
        ]
        self.close = Sequential(
            Conv2d(channels, channels, kernel_size, rng, dtype),
            BatchNorm2d(channels, dtype=dtype),
        )

    def forward(self, x):
        y = x
        for block in self.blocks:
            y = block(y)
        return x + self.close(y)

    def backward(self, grad_out):
        g = self.close.backward(grad_out)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return grad_out + g


class FeatureEncoder(Module):
    def __init__(self, arch: ArchConfig, rng, dtype=DEFAULT_DTYPE):
        layers: list[Module] = []
        in_ch = 2
        n = len(arch.encoder_kernels)
        for i, (k, pool) in enumerate(zip(arch.encoder_kernels, arch.encoder_pools)):
            last = i == n - 1
            out_ch = arch.latent_channels if last else arch.width
            layers.append(Conv2d(in_ch, out_ch, k, rng, dtype))
            if not last:
                # the latent stays unnormalized and unbounded for the quantizer
                layers += [BatchNorm2d(out_ch, dtype=dtype), PReLU(out_ch, dtype=dtype)]
            layers.append(AvgPool(pool))
            in_ch = out_ch
        self.net = Sequential(*layers)

    def forward(self, x):
        if x.shape[-3] != 2:
            raise ShapeError(f"encoder input must have 2 planes, got {x.shape[-3]}")
        check_dims(x.shape[-2], x.shape[-1])
        return self.net(x)

    def backward(self, grad_out, need_input_grad: bool = False):
        return self.net.backward(grad_out, need_input_grad=need_input_grad)


class FeatureDecoder(Module):
    def __init__(self, arch: ArchConfig, rng, dtype=DEFAULT_DTYPE):
        self.latent_channels = arch.latent_channels
        self.residual = ResidualGroup(arch.latent_channels, arch.residual_kernel, rng, dtype)
        layers: list[Module] = []
        in_ch = arch.latent_channels
        n = len(arch.decoder_kernels)
        for i, (k, up) in enumerate(zip(arch.decoder_kernels, arch.decoder_upsamples)):
            last = i == n - 1
            out_ch = 2 if last else arch.width
            layers += [Upsample(up), Conv2d(in_ch, out_ch, k, rng, dtype)]
            if not last:
                layers += [BatchNorm2d(out_ch, dtype=dtype), PReLU(out_ch, dtype=dtype)]
            in_ch = out_ch
        self.net = Sequential(*layers)

    def forward(self, m):
        if m.shape[-3] != self.latent_channels:
            raise ShapeError(
                f"decoder expects {self.latent_channels} feature maps, got {m.shape[-3]}"
            )
        return self.net(self.residual(m))

    def backward(self, grad_out):
        return self.residual.backward(self.net.backward(grad_out))


class Autoencoder(Module):
    """Encoder + decoder pair sharing one input scale."""

    def __init__(self, arch: ArchConfig | None = None, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.arch = arch or ArchConfig()
        rng = np.random.default_rng(seed)
        self.encoder = FeatureEncoder(self.arch, rng, dtype)
        self.decoder = FeatureDecoder(self.arch, rng, dtype)
        self.sigma_norm = 1.0

    @property
    def dtype(self):
        return self.encoder.net.layers[0].weight.data.dtype

    def normalize(self, h: np.ndarray) -> np.ndarray:
        return complex_to_planes(h, self.dtype) / np.asarray(self.sigma_norm, self.dtype)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return planes_to_complex(x * self.sigma_norm)


def feature_encode(h: np.ndarray, model: Autoencoder) -> np.ndarray:
    """Latent features of one (n_c, n_t) or a batch (N, n_c, n_t) of channel matrices.

    Runs the encoder in inference mode.
    """
    h = np.asarray(h)
    check_dims(*h.shape[-2:])
    x = model.normalize(h)
    single = x.ndim == 3
    model.encoder.eval()
    m = model.encoder(x[None] if single else x)
    return m[0] if single else m


def feature_decode(m: np.ndarray, model: Autoencoder) -> np.ndarray:
    """Complex reconstruction from (256, h, w) or (N, 256, h, w) features."""
    m = np.asarray(m, dtype=model.dtype)
    if m.shape[-3] != model.arch.latent_channels:
        raise ShapeError(
            f"features must have {model.arch.latent_channels} channels, got {m.shape[-3]}"
        )
    single = m.ndim == 3
    model.decoder.eval()
    x = model.decoder(m[None] if single else m)
    h = model.denormalize(x)
    return h[0] if single else h
