"""Joint rate-distortion training of the autoencoder and its latent prior."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .entropy import MAX_BINS, FactorizedPrior, add_uniform_noise, quantize
from .network import ArchConfig, Autoencoder, check_dims
from .nn import Adam

log = logging.getLogger(__name__)

LAMBDA_TABLE: tuple[float, ...] = (1e4, 5e4, 1e5, 5e5, 1e6, 5e6)


class TrainingDiverged(RuntimeError):
    pass


def lambda_value(lambda_id: int) -> float:
    if not 0 <= lambda_id < len(LAMBDA_TABLE):
        raise ValueError(f"lambda id {lambda_id} is not in the table (0..{len(LAMBDA_TABLE) - 1})")
    return LAMBDA_TABLE[lambda_id]


def lambda_id_for(value: float) -> int:
    """Nearest table entry in log scale; warns if ``value`` is not in the table."""
    if value <= 0:
        raise ValueError("lambda must be positive")
    logs = np.log(np.asarray(LAMBDA_TABLE))
    idx = int(np.argmin(np.abs(logs - math.log(value))))
    if not math.isclose(LAMBDA_TABLE[idx], value, rel_tol=1e-9):
        warnings.warn(
            f"lambda {value:g} is not in the table; using {LAMBDA_TABLE[idx]:g} (id {idx})",
            stacklevel=2,
        )
    return idx


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-4
    width: int = 256
    distortion_scale: float = 0.01
    support_margin: int = 2
    seed: int = 0


@dataclass
class LossTerms:
    rate: float
    mse: float
    total: float


class RateDistortionModel:
    """Autoencoder, latent prior and the weight between their loss terms.

    Distortion is measured on the normalized planes multiplied by
    ``distortion_scale``: the sum of squared real and imaginary errors divided
    by n_c * n_t.  The rate is the prior's bits per channel dimension.
    """

    def __init__(self, model: Autoencoder, prior: FactorizedPrior, lam: float,
                 distortion_scale: float = 0.01):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.model = model
        self.prior = prior
        self.lam = lam
        self.distortion_scale = distortion_scale

    def parameters(self):
        return self.model.parameters() + self.prior.parameters()

    def train(self, mode: bool = True):
        self.model.train(mode)
        self.prior.train(mode)

    def zero_grad(self):
        self.model.zero_grad()
        self.prior.zero_grad()

    def loss(self, x: np.ndarray, rng: np.random.Generator, backward: bool = False,
             input_grad: bool = False):
        """Loss terms on a normalized (N, 2, n_c, n_t) batch.

        With ``backward`` the parameter gradients are accumulated; with
        ``input_grad`` the gradient w.r.t. ``x`` is returned as well.
        """
        enc, dec = self.model.encoder, self.model.decoder
        n, _, n_c, n_t = x.shape
        m = enc(x)
        m_noisy = add_uniform_noise(m, rng)
        rate, grad_p = self.prior.rate(m_noisy)
        y = dec(m_noisy)
        diff = y - x
        k2 = self.distortion_scale**2
        dims = n * n_c * n_t
        mse = k2 * float(np.sum(diff.astype(np.float64) ** 2)) / dims
        terms = LossTerms(float(rate), mse, float(rate + self.lam * mse))
        if not backward:
            return terms
        g_y = (2.0 * self.lam * k2 / dims) * diff
        g_m = dec.backward(g_y) + self.prior.backward(grad_p)
        g_x = enc.backward(g_m, need_input_grad=input_grad)
        if not input_grad:
            return terms
        # x is also the reconstruction target
        return terms, g_x - g_y


@dataclass
class TrainResult:
    model: Autoencoder
    prior: FactorizedPrior
    tables: object
    lambda_id: int
    distortion_scale: float
    history: list[LossTerms] = field(default_factory=list)


def normalization_scale(samples: np.ndarray) -> float:
    """Standard deviation of the real and imaginary parts taken together."""
    planes = np.concatenate([samples.real.ravel(), samples.imag.ravel()]).astype(np.float64)
    sigma = float(planes.std())
    if not sigma > 0:
        raise ValueError("training set has zero variance")
    return sigma


def encode_latents(model: Autoencoder, samples: np.ndarray, batch: int = 64) -> np.ndarray:
    model.encoder.eval()
    out = []
    for i in range(0, len(samples), batch):
        out.append(model.encoder(model.normalize(samples[i:i + batch])))
    return np.concatenate(out) if out else np.zeros((0, model.arch.latent_channels, 0, 0))


def support_bounds(q: np.ndarray, margin: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel [min - margin, max + margin] of quantized training latents."""
    per_ch = q.transpose(1, 0, 2, 3).reshape(q.shape[1], -1)
    lo = per_ch.min(axis=1).astype(np.int64) - margin
    hi = per_ch.max(axis=1).astype(np.int64) + margin
    # keep every table codable; extreme values fall back to escapes
    width = hi - lo + 2
    over = width > MAX_BINS
    if over.any():
        centre = np.round(np.median(per_ch, axis=1)).astype(np.int64)
        half = (MAX_BINS - 2) // 2
        lo[over] = centre[over] - half
        hi[over] = centre[over] + half - 1
    return lo, hi


def train(samples: np.ndarray, lambda_id: int, cfg: TrainConfig | None = None,
          arch: ArchConfig | None = None, progress=None) -> TrainResult:
    """Train on complex samples (count, n_c, n_t) for the table entry ``lambda_id``.

    ``progress`` is called with (epoch, LossTerms) after every epoch.
    """
    cfg = cfg or TrainConfig()
    samples = np.asarray(samples)
    check_dims(*samples.shape[-2:])
    if not np.all(np.isfinite(samples)):
        raise ValueError("training set contains non-finite entries")
    arch = arch or ArchConfig(width=cfg.width)
    lam = lambda_value(lambda_id)

    model = Autoencoder(arch, seed=cfg.seed)
    model.sigma_norm = normalization_scale(samples)
    prior = FactorizedPrior(arch.latent_channels)
    rd = RateDistortionModel(model, prior, lam, cfg.distortion_scale)
    opt = Adam(rd.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)

    history: list[LossTerms] = []
    count = len(samples)
    rd.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        sums = np.zeros(3)
        seen = 0
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            x = model.normalize(samples[idx])
            rd.zero_grad()
            terms = rd.loss(x, rng, backward=True)
            if not math.isfinite(terms.total):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, batch starting {start}: {terms}"
                )
            opt.step()
            sums += np.array([terms.rate, terms.mse, terms.total]) * len(idx)
            seen += len(idx)
        epoch_terms = LossTerms(*(float(v) for v in sums / max(seen, 1)))
        history.append(epoch_terms)
        log.info("epoch %d rate %.4f mse %.3e total %.4f", epoch, *sums / max(seen, 1))
        if progress is not None:
            progress(epoch, epoch_terms)

    rd.train(False)
    q = quantize(encode_latents(model, samples))
    lo, hi = support_bounds(q, cfg.support_margin)
    tables = prior.finalize(lo, hi)
    return TrainResult(model, prior, tables, lambda_id, cfg.distortion_scale, history)
