"""Central finite-difference gradients, used as an oracle for the tape.

The oracle only ever calls the forward function; it never touches a tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place.

    ``indices`` restricts the probe to a subset of flat positions; other
    entries of the result are left as NaN.
    """
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / (||a|| + ||n||)`` over the probed entries (2-norm)."""
    mask = ~np.isnan(numeric)
    a = np.asarray(analytic, dtype=np.float64)[mask]
    n = numeric[mask]
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


def sample_indices(x: Tensor, count: int, rng: np.random.Generator) -> Sequence[int]:
    size = x.data.size
    if size <= count:
        return range(size)
    return sorted(rng.choice(size, size=count, replace=False).tolist())
