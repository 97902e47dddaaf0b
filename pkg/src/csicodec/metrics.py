"""Reconstruction quality measures for channel matrices."""

from __future__ import annotations

import numpy as np


def nmse(h: np.ndarray, h_hat: np.ndarray) -> float:
    """Normalized MSE in dB, averaged over samples in the linear domain.

    Accepts one (n_c, n_t) matrix or a batch (N, n_c, n_t).  A perfect
    reconstruction returns ``-inf``.
    """
    h = np.asarray(h, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    if h.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    if h.ndim == 2:
        h, h_hat = h[None], h_hat[None]
    ref = np.sum(np.abs(h) ** 2, axis=(1, 2))
    if np.any(ref == 0):
        raise ValueError("NMSE is undefined for an all-zero reference matrix")
    ratio = float(np.mean(np.sum(np.abs(h - h_hat) ** 2, axis=(1, 2)) / ref))
    if ratio == 0.0:
        return float("-inf")
    return 10.0 * float(np.log10(ratio))


def cosine_corr(h: np.ndarray, h_hat: np.ndarray, strict: bool = False) -> float:
    """Mean over subcarriers (and samples) of |h_hat_n^H h_n| / (|h_hat_n| |h_n|).

    Rows where either vector is zero are skipped, or rejected when ``strict``.
    """
    h = np.asarray(h, dtype=np.complex128)
    h_hat = np.asarray(h_hat, dtype=np.complex128)
    if h.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {h.shape} vs {h_hat.shape}")
    norms = np.linalg.norm(h, axis=-1) * np.linalg.norm(h_hat, axis=-1)
    zero = norms == 0
    if strict and zero.any():
        raise ValueError(f"{int(zero.sum())} subcarrier rows have zero norm")
    inner = np.abs(np.sum(np.conj(h_hat) * h, axis=-1))
    valid = ~zero
    if not valid.any():
        raise ValueError("no subcarrier row with non-zero norm")
    rho = inner[valid] / norms[valid]
    if h.ndim == 2:
        return float(np.clip(rho.mean(), 0.0, 1.0))
    # per-sample mean over its valid rows, then mean over samples
    per_sample = np.array([
        (inner[i][valid[i]] / norms[i][valid[i]]).mean()
        for i in range(h.shape[0]) if valid[i].any()
    ])
    return float(np.clip(per_sample.mean(), 0.0, 1.0))
