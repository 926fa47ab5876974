"""Central finite-difference verification of analytic gradients.

Run in 64-bit: float32 lacks the headroom for h=1e-3 probes. The probe
mutates tensor data in place and restores it, so the closure under test
must re-run its forward pass on every call.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward


def numeric_gradient(f: Callable[[], Tensor], t: Tensor, h: float = 1e-3,
                     indices: Sequence[int] | None = None) -> np.ndarray:
    """Central-difference d f / d t, optionally only at flat `indices`."""
    flat = t.data.ravel()
    idx = range(flat.size) if indices is None else indices
    grad = np.zeros(len(list(idx)) if indices is not None else flat.size,
                    dtype=np.float64)
    idx = range(flat.size) if indices is None else list(indices)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        grad[k] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative disagreement, safe for all-zero gradients."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.max(np.abs(analytic - numeric))
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(diff / scale)


def check_gradient(f: Callable[[], Tensor], wrt: Sequence[Tensor],
                   h: float = 1e-3, max_samples: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Compare analytic grads of scalar f against central differences.

    Returns the worst relative error over all checked tensors. With
    `max_samples`, only a random subset of each tensor's components is
    probed (needed for parameter-sized tensors).
    """
    for t in wrt:
        t.grad = None
    loss = f()
    backward(loss)
    worst = 0.0
    for t in wrt:
        if t.grad is None:
            analytic = np.zeros_like(t.data, dtype=np.float64)
        else:
            analytic = t.grad.astype(np.float64)
        if max_samples is not None and t.data.size > max_samples:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(t.data.size, size=max_samples, replace=False)
            numeric = numeric_gradient(f, t, h=h, indices=indices)
            err = relative_error(analytic.ravel()[indices], numeric)
        else:
            numeric = numeric_gradient(f, t, h=h)
            err = relative_error(analytic.ravel(), numeric)
        worst = max(worst, err)
    return worst
