"""Quantizer, training noise, factorized prior and table-driven entropy coding.

The prior models every latent channel independently with a learned monotone
cumulative function ``c`` (a few small stages with positive weights and
tanh gates, squashed by a sigmoid).  The probability of integer ``k`` is
``c(k + 1/2) - c(k - 1/2)``.  For coding, each channel's distribution over
``[k_min, k_max]`` plus one escape bin is frozen into 16-bit integer
frequencies; escaped values follow as raw 32-bit integers.
"""

from __future__ import annotations

import bisect
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .nn import DEFAULT_DTYPE, Module, Parameter
from .rangecoder import PRECISION, TOTAL, RangeDecoder, RangeEncoder

LIKELIHOOD_BOUND = 1e-9
ESCAPE_RAW_BITS = 32
MAX_BINS = 4096


class DecodeError(ValueError):
    """Payload could not be decoded into the expected symbols."""


class ChecksumError(DecodeError):
    """Decoded symbols do not match the transmitted checksum."""


def quantize(m: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, ties to even."""
    return np.rint(m)


def add_uniform_noise(m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Training stand-in for :func:`quantize`: add i.i.d. U[-0.5, 0.5] noise."""
    return m + rng.uniform(-0.5, 0.5, size=np.shape(m)).astype(np.asarray(m).dtype)


def _softplus(x):
    return np.logaddexp(0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class FactorizedPrior(Module):
    """Per-channel learned cumulative distribution.

    ``filters`` are the hidden widths between the scalar input and the
    scalar logit, so the default has three stages 1 -> 8 -> 8 -> 1.  At
    initialization ``c`` is exactly the standard logistic CDF.
    """

    def __init__(self, channels: int = 256, filters: tuple[int, ...] = (8, 8),
                 dtype=DEFAULT_DTYPE):
        self.channels = channels
        self.filters = tuple(filters)
        dims = (1, *self.filters, 1)
        self.matrices: list[Parameter] = []
        self.biases: list[Parameter] = []
        self.factors: list[Parameter] = []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            # softplus(raw) = 1/fan_in: every stage averages its inputs
            raw = np.full((channels, fan_out, fan_in), _inv_softplus(1.0 / fan_in))
            self.matrices.append(Parameter(raw.astype(dtype)))
            bias = np.zeros((channels, fan_out, 1))
            if i == 0 and fan_out > 1:
                # distinct zero-mean offsets break the symmetry between units
                bias[:, :, 0] = np.linspace(-0.5, 0.5, fan_out)
            self.biases.append(Parameter(bias.astype(dtype)))
            if i < len(dims) - 2:
                self.factors.append(Parameter(np.zeros((channels, fan_out, 1), dtype=dtype)))
        self._cache = None

    # -- cumulative logits ---------------------------------------------------

    def _logits(self, x: np.ndarray, keep: bool = False):
        """x: (C, 1, n) -> logits (C, 1, n); optionally returns the tape."""
        tape = []
        h = x
        last = len(self.matrices) - 1
        for i, (mat, bias) in enumerate(zip(self.matrices, self.biases)):
            w = _softplus(mat.data)
            pre = np.matmul(w, h) + bias.data
            if i < last:
                t_pre = np.tanh(pre)
                t_fac = np.tanh(self.factors[i].data)
                out = pre + t_fac * t_pre
                tape.append((h, w, t_pre, t_fac))
            else:
                out = pre
                tape.append((h, w, None, None))
            h = out
        return (h, tape) if keep else h

    def _logits_backward(self, grad: np.ndarray, tape) -> np.ndarray:
        last = len(self.matrices) - 1
        for i in range(last, -1, -1):
            h_in, w, t_pre, t_fac = tape[i]
            if i < last:
                self.factors[i].grad += (grad * t_pre).sum(axis=2, keepdims=True) * (1 - t_fac**2)
                grad = grad * (1 + t_fac * (1 - t_pre**2))
            self.biases[i].grad += grad.sum(axis=2, keepdims=True)
            self.matrices[i].grad += np.matmul(grad, h_in.transpose(0, 2, 1)) * _sigmoid(
                self.matrices[i].data
            )
            grad = np.matmul(w.transpose(0, 2, 1), grad)
        return grad

    def cdf(self, channel: int, x) -> np.ndarray:
        """c(x) for one channel; x may be any array of reals."""
        x = np.asarray(x, dtype=np.float64)
        logits = self._channel_logits(channel, x.reshape(-1))
        return _sigmoid(logits).reshape(x.shape)

    def _channel_logits(self, channel: int, x: np.ndarray) -> np.ndarray:
        h = x.reshape(1, -1)
        last = len(self.matrices) - 1
        for i, (mat, bias) in enumerate(zip(self.matrices, self.biases)):
            h = _softplus(mat.data[channel].astype(np.float64)) @ h + bias.data[channel]
            if i < last:
                h = h + np.tanh(self.factors[i].data[channel]) * np.tanh(h)
        return h.reshape(-1)

    # -- likelihoods -----------------------------------------------------------

    def likelihood(self, m: np.ndarray) -> np.ndarray:
        """p(m) = c(m + 1/2) - c(m - 1/2) for (C, H, W) or (N, C, H, W) input.

        In training mode the intermediate values are kept for :meth:`backward`.
        """
        single = m.ndim == 3
        mb = m[None] if single else m
        n, c, h, w = mb.shape
        if c != self.channels:
            raise ValueError(f"prior has {self.channels} channels, input has {c}")
        flat = mb.transpose(1, 0, 2, 3).reshape(c, 1, -1)
        size = flat.shape[2]
        both = np.concatenate([flat - 0.5, flat + 0.5], axis=2)
        logits, tape = self._logits(both, keep=True)
        lower, upper = logits[:, :, :size], logits[:, :, size:]
        # evaluate the difference on the side where both sigmoids are small
        sign = -np.sign(lower + upper)
        sign[sign == 0] = 1
        p = np.abs(_sigmoid(sign * upper) - _sigmoid(sign * lower))
        if self.training:
            self._cache = (tape, lower, upper, (n, c, h, w), single)
        p = p.reshape(c, n, h, w).transpose(1, 0, 2, 3)
        return p[0] if single else p

    def backward(self, grad_p: np.ndarray) -> np.ndarray:
        """Accumulates parameter gradients; returns d/dm given dL/dp."""
        tape, lower, upper, (n, c, h, w), single = self._cache
        g = (grad_p[None] if single else grad_p).transpose(1, 0, 2, 3).reshape(c, 1, -1)
        d_upper = g * _sigmoid(upper) * _sigmoid(-upper)
        d_lower = -g * _sigmoid(lower) * _sigmoid(-lower)
        g_in = self._logits_backward(np.concatenate([d_lower, d_upper], axis=2), tape)
        size = lower.shape[2]
        g_m = g_in[:, :, :size] + g_in[:, :, size:]
        self._cache = None
        g_m = g_m.reshape(c, n, h, w).transpose(1, 0, 2, 3)
        return g_m[0] if single else g_m

    def rate(self, m: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean bits per latent element and d(rate)/dp for :meth:`backward`.

        The latent holds n_c * n_t elements per sample, so this is the rate in
        bits per channel dimension.
        """
        p = self.likelihood(m)
        p_b = np.maximum(p, LIKELIHOOD_BOUND)
        bits = -np.log2(p_b)
        count = bits.size
        rate = float(bits.sum(dtype=np.float64) / count)
        grad_p = (-1.0 / (math.log(2) * count)) / p_b
        return rate, grad_p.astype(p.dtype)

    def bin_probability(self, channel: int, k: int) -> float:
        return float(np.diff(self.cdf(channel, [k - 0.5, k + 0.5]))[0])

    def pmf(self, channel: int, k_min: int, k_max: int) -> tuple[np.ndarray, float]:
        """Bin probabilities on [k_min, k_max] and the leftover tail mass."""
        edges = np.arange(k_min, k_max + 2, dtype=np.float64) - 0.5
        c = self.cdf(channel, edges)
        pmf = np.maximum(np.diff(c), 0.0)
        tail = max(0.0, 1.0 - pmf.sum())
        return pmf, tail

    def finalize(self, k_min, k_max) -> "EntropyModel":
        """Freeze into integer frequency tables for the given per-channel support."""
        k_min = np.broadcast_to(np.asarray(k_min, dtype=np.int64), (self.channels,))
        k_max = np.broadcast_to(np.asarray(k_max, dtype=np.int64), (self.channels,))
        freqs = []
        for ch in range(self.channels):
            lo, hi = int(k_min[ch]), int(k_max[ch])
            if hi < lo:
                raise ValueError(f"empty support for channel {ch}")
            if hi - lo + 2 > MAX_BINS:
                raise ValueError(f"support of channel {ch} exceeds {MAX_BINS} bins")
            pmf, tail = self.pmf(ch, lo, hi)
            freqs.append(quantize_pmf(np.append(pmf, tail)))
        return EntropyModel(np.array(k_min), freqs)


def quantize_pmf(p: np.ndarray, total: int = TOTAL) -> np.ndarray:
    """Integer frequencies summing exactly to ``total``, each at least 1.

    Mass beyond the mandatory 1 per bin is split by the largest-remainder rule.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    if n > total:
        raise ValueError("more bins than probability units")
    s = p.sum()
    p = p / s if s > 0 else np.full(n, 1.0 / n)
    share = p * (total - n)
    base = np.floor(share).astype(np.int64)
    deficit = total - n - int(base.sum())
    if deficit:
        order = np.argsort(-(share - base), kind="stable")
        base[order[:deficit]] += 1
    return base + 1


@dataclass
class EntropyModel:
    """Frozen per-channel coding tables.

    ``freqs[c]`` holds one frequency per value in ``[k_min[c], k_min[c] + K - 1]``
    followed by the escape frequency.
    """

    k_min: np.ndarray
    freqs: list[np.ndarray]

    def __post_init__(self):
        self.k_min = np.asarray(self.k_min, dtype=np.int64)
        self.freqs = [np.asarray(f, dtype=np.int64) for f in self.freqs]
        for ch, f in enumerate(self.freqs):
            if int(f.sum()) != TOTAL or f.min() < 1:
                raise ValueError(f"channel {ch} table must sum to {TOTAL} with every entry >= 1")
        self._cum = [[0, *np.cumsum(f).tolist()] for f in self.freqs]

    @property
    def channels(self) -> int:
        return len(self.freqs)

    @property
    def k_max(self) -> np.ndarray:
        return self.k_min + np.array([len(f) - 2 for f in self.freqs])

    def bin_probability(self, channel: int, k: int) -> float:
        """Table probability of ``k``; the escape probability outside the support."""
        f = self.freqs[channel]
        idx = k - int(self.k_min[channel])
        if 0 <= idx < len(f) - 1:
            return float(f[idx]) / TOTAL
        return float(f[-1]) / TOTAL

    def escape_probability(self, channel: int) -> float:
        return float(self.freqs[channel][-1]) / TOTAL

    def ideal_bits(self, q: np.ndarray) -> float:
        """Sum of -log2 p over the symbols of ``q`` (escapes add their raw bits)."""
        q = _channel_major(q, self.channels)
        total = 0.0
        for ch in range(self.channels):
            f = self.freqs[ch]
            k = len(f) - 1
            idx = q[ch] - self.k_min[ch]
            inside = (idx >= 0) & (idx < k)
            counts = np.bincount(idx[inside], minlength=k)
            logp = np.log2(f[:k] / TOTAL)
            total -= float(counts @ logp)
            n_esc = int((~inside).sum())
            total += n_esc * (ESCAPE_RAW_BITS - math.log2(f[-1] / TOTAL))
        return total

    def table_bytes(self) -> bytes:
        """Deterministic serialization used inside checkpoints."""
        parts = [np.uint16(self.channels).tobytes()]
        for ch in range(self.channels):
            parts.append(np.int32(self.k_min[ch]).astype("<i4").tobytes())
            parts.append(np.uint32(len(self.freqs[ch])).astype("<u4").tobytes())
            parts.append(self.freqs[ch].astype("<u2").tobytes())
        return b"".join(parts)

    @classmethod
    def from_table_bytes(cls, data: bytes, offset: int = 0) -> tuple["EntropyModel", int]:
        (channels,) = np.frombuffer(data, "<u2", 1, offset)
        offset += 2
        k_min, freqs = [], []
        for _ in range(int(channels)):
            k_min.append(int(np.frombuffer(data, "<i4", 1, offset)[0]))
            n = int(np.frombuffer(data, "<u4", 1, offset + 4)[0])
            offset += 8
            freqs.append(np.frombuffer(data, "<u2", n, offset).astype(np.int64))
            offset += 2 * n
        return cls(np.array(k_min), freqs), offset


def _channel_major(q: np.ndarray, channels: int) -> np.ndarray:
    q = np.asarray(q)
    if q.size == 0:
        return np.zeros((channels, 0), dtype=np.int64)
    if q.ndim == 1:
        if q.size % channels:
            raise ValueError(f"{q.size} symbols do not split into {channels} channels")
        return q.reshape(channels, -1).astype(np.int64)
    if q.shape[0] != channels:
        raise ValueError(f"expected {channels} channels, got shape {q.shape}")
    if not np.all(q == np.round(q)):
        raise ValueError("entropy coding needs integer-valued features")
    return q.reshape(channels, -1).astype(np.int64)


def symbol_checksum(q: np.ndarray) -> int:
    """CRC-32 of the symbols as little-endian int32 in channel-major order."""
    return zlib.crc32(np.asarray(q, dtype=np.int64).astype("<i4").tobytes()) & 0xFFFFFFFF


def entropy_encode(q: np.ndarray, model: EntropyModel) -> bytes:
    """Range-code integer features (C, H, W) channel by channel."""
    q = _channel_major(q, model.channels)
    enc = RangeEncoder()
    encode = enc.encode
    for ch in range(model.channels):
        cum = model._cum[ch]
        k = len(cum) - 2
        esc_lo, esc_f = cum[k], cum[k + 1] - cum[k]
        k_min = int(model.k_min[ch])
        for v in q[ch].tolist():
            s = v - k_min
            if 0 <= s < k:
                encode(cum[s], cum[s + 1] - cum[s])
            else:
                encode(esc_lo, esc_f)
                enc.encode_raw(v & 0xFFFFFFFF, ESCAPE_RAW_BITS)
    return enc.finish()


def entropy_decode(payload: bytes, model: EntropyModel, count: int,
                   checksum: int | None = None) -> np.ndarray:
    """Inverse of :func:`entropy_encode`; returns ``count`` symbols channel-major.

    When ``checksum`` is given the decoded symbols are verified against it.
    """
    if count % model.channels:
        raise DecodeError(f"{count} symbols do not split into {model.channels} channels")
    per_channel = count // model.channels
    out = np.empty((model.channels, per_channel), dtype=np.int64)
    if count:
        dec = RangeDecoder(payload)
        for ch in range(model.channels):
            cum = model._cum[ch]
            k = len(cum) - 2
            k_min = int(model.k_min[ch])
            row = out[ch]
            for i in range(per_channel):
                t = dec.target()
                s = bisect.bisect_right(cum, t) - 1
                dec.consume(cum[s], cum[s + 1] - cum[s])
                if s < k:
                    row[i] = s + k_min
                else:
                    raw = dec.decode_raw(ESCAPE_RAW_BITS)
                    row[i] = raw - (1 << 32) if raw >= 1 << 31 else raw
    out = out.reshape(-1)
    if checksum is not None and symbol_checksum(out) != checksum:
        raise ChecksumError("symbol checksum mismatch (truncated payload or wrong model)")
    return out


def rate_estimate(m: np.ndarray, model) -> float:
    """Bits per channel dimension that ``model`` assigns to latent ``m``.

    With a :class:`FactorizedPrior` this is the differentiable training
    estimate on (noisy) reals; with a finalized :class:`EntropyModel` it is the
    ideal code length of the integer tensor under the coding tables.  Batched
    input gives the per-sample mean.
    """
    m = np.asarray(m)
    n = m.shape[0] if m.ndim == 4 else 1
    elems = m.size // n
    if elems == 0:
        return 0.0
    if isinstance(model, FactorizedPrior):
        p = model.likelihood(m)
        return float(-np.log2(np.maximum(p, LIKELIHOOD_BOUND)).sum(dtype=np.float64) / m.size)
    samples = m if m.ndim == 4 else m[None]
    return sum(model.ideal_bits(s) for s in samples) / (n * elems)


__all__ = [
    "PRECISION",
    "ChecksumError",
    "DecodeError",
    "EntropyModel",
    "FactorizedPrior",
    "add_uniform_noise",
    "entropy_decode",
    "entropy_encode",
    "quantize",
    "quantize_pmf",
    "rate_estimate",
    "symbol_checksum",
]
