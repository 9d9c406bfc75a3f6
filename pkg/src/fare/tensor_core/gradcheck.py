"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare reverse-mode gradients of a scalar ``fn()`` against central differences.

    Returns the max relative error over the checked coordinates, with denominator
    ``max(|analytic|, |numeric|, 1e-8)``. A coordinate where both gradients are
    below the resolution of the difference quotient (4 ulps of f over 2*eps) is
    an agreed zero and scores 0. When ``max_coords`` is set, that many
    coordinates per parameter are sampled with ``rng`` instead of checking all.
    """
    for p in params:
        p.grad = None
    out = fn()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("function value is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("function value is not finite")
            numeric = (f_plus - f_minus) / (2 * eps)
            a = ga.reshape(-1)[i]
            resolution = 4 * np.spacing(max(abs(f_plus), abs(f_minus))) / (2 * eps)
            if abs(a) <= resolution and abs(numeric) <= resolution:
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
