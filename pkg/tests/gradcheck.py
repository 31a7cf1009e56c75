"""Central finite-difference oracle for engine gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from smalltunes import autodiff as ad
from smalltunes.autodiff import Tensor


def gradient_error(fn: Callable[[], Tensor], tensors: Sequence[Tensor], seed: int = 0,
                   rel_step: float | None = None, dtype=np.float64) -> float:
    """Relative error ``|analytic - numeric| / |numeric|`` over all entries of ``tensors``.

    The scalar probed is ``sum(fn() * R)`` for a fixed random ``R``. By default
    both sides run in float64 with a tiny step, so neither float32 roundoff nor
    ReLU kinks inside the step dominate the comparison. The step is
    ``rel_step * max(1, rms(tensor))``.
    """
    if rel_step is None:
        rel_step = 1e-6 if np.dtype(dtype) == np.float64 else 1e-2
    saved = [(t.data, t.grad) for t in tensors]
    try:
        with ad.precision(dtype):
            for t in tensors:
                t.data = t.data.astype(dtype)
                t.grad = np.zeros_like(t.data)
            return _error(fn, tensors, seed, rel_step)
    finally:
        for t, (data, grad) in zip(tensors, saved):
            t.data, t.grad = data, grad


def _error(fn, tensors, seed, rel_step) -> float:
    out = fn()
    weights = np.random.default_rng(seed).normal(size=out.shape)
    ad.sum_all(ad.mul(fn(), Tensor(weights))).backward()
    analytic = np.concatenate([t.grad.ravel().astype(np.float64) for t in tensors])

    def probe() -> float:
        with ad.no_grad():
            return float(np.sum(fn().data.astype(np.float64) * weights))

    numeric = []
    for t in tensors:
        flat = t.data.reshape(-1)
        h = rel_step * max(1.0, float(np.sqrt(np.mean(flat.astype(np.float64) ** 2))))
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = probe()
            flat[i] = old - h
            down = probe()
            flat[i] = old
            numeric.append((up - down) / (2 * h))
    numeric = np.asarray(numeric)
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))
