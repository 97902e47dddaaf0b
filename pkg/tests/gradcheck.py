"""Central finite differences for the gradient tests.

The 32-bit checks compare gradients computed by the float32 engine against
differences of the same function evaluated in float64, so that the reference
is not itself dominated by float32 rounding.
"""

import numpy as np

STEP = 1e-4


def numeric_grad(f, x: np.ndarray, step: float = STEP, index=None) -> np.ndarray:
    """d f / d x for scalar ``f`` (called with no arguments) by perturbing ``x`` in place.

    ``index`` restricts the check to a list of flat positions; others are NaN.
    """
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if index is None else index
    for i in positions:
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * step)
    return out.reshape(x.shape)


def rel_error(analytic, numeric, floor: float) -> float:
    """Worst entry-wise |a - n| / max(|a|, |n|, floor) over the checked entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    mask = ~np.isnan(n)
    a, n = a[mask], n[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def sample_index(size: int, count: int, rng) -> list:
    if size <= count:
        return list(range(size))
    return sorted(rng.choice(size, count, replace=False).tolist())
