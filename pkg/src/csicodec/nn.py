"""Small numpy layer set with hand-written backward passes.

Activations are plain ``numpy.ndarray`` objects laid out as
(batch, channels, height, width).  Every layer keeps whatever it needs from
its last ``forward`` call and consumes it in ``backward``, which accumulates
parameter gradients into ``Parameter.grad`` and returns the input gradient.

Only the layers the compressor needs live here: SAME-padded convolution,
PReLU, batch normalization, average pooling and nearest-neighbour upsampling,
plus an Adam optimizer.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes do not satisfy a layer's contract."""


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {x.shape}")


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patches of a SAME-padded batch as a (N*H*W, C*kh*kw) matrix."""
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N, C, H, W, kh, kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * kh * kw)


def _check_kernel(x: np.ndarray, kernel: np.ndarray) -> None:
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be (out, in, kh, kw), got shape {kernel.shape}")
    kh, kw = kernel.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"SAME padding needs odd kernel sizes, got {kh}x{kw}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects {kernel.shape[1]}"
        )


def _scatter_conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """SAME correlation computed by multiplying first and shifting outputs.

    Cheaper than im2col when the kernel has fewer output than input channels.
    """
    n, c, h, w = x.shape
    out_ch, _, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    x_mat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    taps = (x_mat @ kernel.transpose(1, 0, 2, 3).reshape(c, -1)).reshape(n, h, w, out_ch, kh, kw)
    acc = np.zeros((n, h + 2 * ph, w + 2 * pw, out_ch), dtype=taps.dtype)
    for a in range(kh):
        for b in range(kw):
            acc[:, kh - 1 - a:kh - 1 - a + h, kw - 1 - b:kw - 1 - b + w] += taps[..., a, b]
    return acc[:, ph:ph + h, pw:pw + w].transpose(0, 3, 1, 2)


def _conv(x: np.ndarray, kernel: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    n, c, h, w = x.shape
    out_ch, _, kh, kw = kernel.shape
    if cols is None:
        if out_ch < c and kh * kw > 1:
            return _scatter_conv(x, kernel)
        cols = _im2col(x, kh, kw)
    y = cols @ kernel.reshape(out_ch, -1).T
    return y.reshape(n, h, w, out_ch).transpose(0, 3, 1, 2)


def _kernel_grad(x: np.ndarray, g: np.ndarray, kernel_shape, cols: np.ndarray | None) -> np.ndarray:
    out_ch, c, kh, kw = kernel_shape
    g_mat = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    if cols is not None or c <= out_ch:
        if cols is None:
            cols = _im2col(x, kh, kw)
        return (g_mat.T @ cols).reshape(kernel_shape)
    # patches of the (narrower) gradient; tap offsets come out mirrored
    x_mat = x.transpose(0, 2, 3, 1).reshape(-1, c)
    tmp = (x_mat.T @ _im2col(g, kh, kw)).reshape(c, out_ch, kh, kw)
    return np.ascontiguousarray(tmp[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 convolution (cross-correlation) with zero SAME padding.

    Accepts (C, H, W) or (N, C, H, W) input; output keeps the spatial size.
    """
    xb, squeeze = _as_batch(x)
    _check_kernel(xb, kernel)
    y = _conv(xb, kernel)
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    y = np.ascontiguousarray(y)
    return y[0] if squeeze else y


def conv2d_backward(
    x: np.ndarray,
    kernel: np.ndarray,
    grad_out: np.ndarray,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` w.r.t. input, kernel and bias.

    ``cols`` may carry the patch matrix from the forward pass to skip
    rebuilding it.
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    _check_kernel(xb, kernel)
    n, _, h, w = xb.shape
    out_ch = kernel.shape[0]
    if gb.shape != (n, out_ch, h, w):
        raise ShapeError(
            f"upstream gradient has shape {gb.shape}, expected {(n, out_ch, h, w)}"
        )
    kernel_grad = _kernel_grad(xb, gb, kernel.shape, cols)
    bias_grad = gb.sum(axis=(0, 2, 3))
    input_grad = None
    if need_input_grad:
        # adjoint of a SAME correlation with odd kernels: correlate with the
        # spatially flipped, channel-transposed kernel
        flipped = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        input_grad = np.ascontiguousarray(_conv(gb, flipped))
        if squeeze:
            input_grad = input_grad[0]
    return input_grad, kernel_grad, bias_grad


def prelu(x: np.ndarray, slope: np.ndarray) -> np.ndarray:
    a = np.asarray(slope, dtype=x.dtype).reshape(_channel_shape(x))
    return np.where(x >= 0, x, a * x)


def prelu_backward(
    x: np.ndarray, slope: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (input_grad, slope_grad); slope_grad is summed per channel."""
    a = np.asarray(slope, dtype=x.dtype).reshape(_channel_shape(x))
    neg = x < 0
    input_grad = np.where(neg, a * grad_out, grad_out)
    axes = _non_channel_axes(x)
    slope_grad = np.where(neg, x * grad_out, 0).sum(axis=axes)
    return input_grad, np.reshape(slope_grad, np.shape(slope))


def _channel_shape(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 4:
        return (1, -1, 1, 1)
    if x.ndim == 3:
        return (-1, 1, 1)
    return (-1,) if x.ndim == 1 else (1,) * x.ndim


def _non_channel_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 4:
        return (0, 2, 3)
    if x.ndim == 3:
        return (1, 2)
    return ()


def batch_norm_train(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float
) -> tuple[np.ndarray, tuple]:
    """Normalize with per-channel batch statistics.

    Returns the output and a cache holding (x_hat, inv_std, gamma, mean, var).
    """
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count < 2:
        raise ShapeError("batch norm in train mode needs at least 2 values per channel")
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = gamma.reshape(1, -1, 1, 1) * x_hat + beta.reshape(1, -1, 1, 1)
    return y, (x_hat, inv_std, gamma, mean, var)


def batch_norm_infer(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float,
) -> np.ndarray:
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale
    return x * scale.reshape(1, -1, 1, 1).astype(x.dtype) + shift.reshape(1, -1, 1, 1).astype(x.dtype)


def batch_norm_backward(grad_out: np.ndarray, cache: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (input_grad, gamma_grad, beta_grad) for :func:`batch_norm_train`."""
    x_hat, inv_std, gamma, _, _ = cache
    axes = (0, 2, 3)
    count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    beta_grad = grad_out.sum(axis=axes)
    gamma_grad = (grad_out * x_hat).sum(axis=axes)
    g_hat = grad_out * gamma.reshape(1, -1, 1, 1)
    input_grad = (inv_std.reshape(1, -1, 1, 1) / count) * (
        count * g_hat
        - g_hat.sum(axis=axes).reshape(1, -1, 1, 1)
        - x_hat * (g_hat * x_hat).sum(axis=axes).reshape(1, -1, 1, 1)
    )
    return input_grad, gamma_grad, beta_grad


def avg_pool(x: np.ndarray, factor: int) -> np.ndarray:
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"spatial dims {h}x{w} are not divisible by pooling factor {factor}")
    return x.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def avg_pool_backward(grad_out: np.ndarray, factor: int) -> np.ndarray:
    return upsample_nearest(grad_out, factor) / (factor * factor)


def upsample_nearest(x: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_nearest_backward(grad_out: np.ndarray, factor: int) -> np.ndarray:
    *lead, h, w = grad_out.shape
    if h % factor or w % factor:
        raise ShapeError(f"gradient dims {h}x{w} are not divisible by factor {factor}")
    return grad_out.reshape(*lead, h // factor, factor, w // factor, factor).sum(axis=(-3, -1))


# ---------------------------------------------------------------------------
# layer objects
# ---------------------------------------------------------------------------


class Parameter:
    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter(shape={self.data.shape}, dtype={self.data.dtype})"


class Module:
    """Base class: tracks parameters, buffers and child modules by attribute."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{prefix}{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        """Casts parameters and buffers in place (e.g. float64 for gradient checks)."""
        for m in self.modules():
            for value in vars(m).values():
                items = value if isinstance(value, (list, tuple)) else [value]
                for p in items:
                    if isinstance(p, Parameter):
                        p.data = p.data.astype(dtype)
                        p.grad = np.zeros_like(p.data)
            for name in getattr(m, "_buffers", ()):
                buf = getattr(m, name)
                if buf is not None:
                    setattr(m, name, buf.astype(dtype))
        return self

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, rng: np.random.Generator,
                 dtype=DEFAULT_DTYPE):
        if kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd, got {kernel_size}")
        fan_in = in_ch * kernel_size * kernel_size
        # uniform on [-b, b] has variance b^2/3; match He variance 2/fan_in
        bound = math.sqrt(6.0 / fan_in)
        self.weight = Parameter(
            rng.uniform(-bound, bound, (out_ch, in_ch, kernel_size, kernel_size)).astype(dtype)
        )
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        self._x = None
        self._cols = None

    def forward(self, x):
        _check_kernel(x, self.weight.data)
        out_ch, in_ch, kh, kw = self.weight.data.shape
        cols = _im2col(x, kh, kw) if in_ch <= out_ch else None
        y = _conv(x, self.weight.data, cols) + self.bias.data.reshape(1, -1, 1, 1)
        if self.training:
            self._x, self._cols = x, cols
        return np.ascontiguousarray(y)

    def backward(self, grad_out, need_input_grad: bool = True):
        gx, gw, gb = conv2d_backward(
            self._x, self.weight.data, grad_out, cols=self._cols, need_input_grad=need_input_grad
        )
        self.weight.grad += gw
        self.bias.grad += gb
        self._x = self._cols = None
        return gx


class PReLU(Module):
    def __init__(self, channels: int, init: float = 0.25, dtype=DEFAULT_DTYPE):
        self.slope = Parameter(np.full(channels, init, dtype=dtype))
        self._x = None

    def forward(self, x):
        if self.training:
            self._x = x
        return prelu(x, self.slope.data)

    def backward(self, grad_out):
        gx, ga = prelu_backward(self._x, self.slope.data, grad_out)
        self.slope.grad += ga
        self._x = None
        return gx


class BatchNorm2d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9,
                 dtype=DEFAULT_DTYPE):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps
        self.momentum = momentum
        self.running_mean: np.ndarray | None = None
        self.running_var: np.ndarray | None = None
        self.track_running_stats = True
        self._cache = None

    def forward(self, x):
        if self.training:
            y, cache = batch_norm_train(x, self.gamma.data, self.beta.data, self.eps)
            self._cache = cache
            if self.track_running_stats:
                _, _, _, mean, var = cache
                if self.running_mean is None:
                    self.running_mean, self.running_var = mean.copy(), var.copy()
                else:
                    m = self.momentum
                    self.running_mean = m * self.running_mean + (1 - m) * mean
                    self.running_var = m * self.running_var + (1 - m) * var
            return y
        if self.running_mean is None:
            raise RuntimeError("batch norm running statistics are uninitialized; train first")
        return batch_norm_infer(
            x, self.gamma.data, self.beta.data, self.running_mean, self.running_var, self.eps
        )

    def backward(self, grad_out):
        gx, gg, gb = batch_norm_backward(grad_out, self._cache)
        self.gamma.grad += gg
        self.beta.grad += gb
        self._cache = None
        return gx


class AvgPool(Module):
    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x):
        return avg_pool(x, self.factor)

    def backward(self, grad_out):
        return avg_pool_backward(grad_out, self.factor)


class Upsample(Module):
    def __init__(self, factor: int):
        self.factor = factor

    def forward(self, x):
        return upsample_nearest(x, self.factor)

    def backward(self, grad_out):
        return upsample_nearest_backward(grad_out, self.factor)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, grad_out, need_input_grad: bool = True):
        for i, layer in enumerate(reversed(self.layers)):
            last = i == len(self.layers) - 1
            if last and not need_input_grad and isinstance(layer, Conv2d):
                return layer.backward(grad_out, need_input_grad=False)
            grad_out = layer.backward(grad_out)
        return grad_out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a list of :class:`Parameter` objects."""

    def __init__(self, params: list[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            adam_update(p.data, p.grad, m, v, t, self.lr, self.beta1, self.beta2, self.eps,
                        corrections=(c1, c2))


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, corrections=None):
    """One in-place Adam step on ``param`` given moment buffers ``m``, ``v``.

    ``t`` is the 1-based step index used for bias correction.
    """
    if param.shape != grad.shape or m.shape != param.shape or v.shape != param.shape:
        raise ShapeError("Adam state shapes must match the parameter")
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    c1, c2 = corrections if corrections is not None else (1 - beta1**t, 1 - beta2**t)
    param -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(param.dtype)
    return param
