"""Adamax (infinity-norm Adam variant)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamaxState:
    alpha: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    u: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.alpha < 0 or self.epsilon < 0:
            raise ValueError("alpha and epsilon must be non-negative")


def _all_finite(g: np.ndarray) -> bool:
    # a finite sum proves every element finite; only an overflowing sum needs the elementwise scan
    return bool(np.isfinite(np.sum(g))) or bool(np.all(np.isfinite(g)))


def adamax_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamaxState) -> None:
    """Apply one Adamax update in place to every parameter named in ``grads``.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);  theta <- theta - alpha/(1-b1^t) * m/(u+eps)
    """
    for name, g in grads.items():
        if not _all_finite(g):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
    state.t += 1
    lr = state.alpha / (1.0 - state.beta1 ** state.t)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.u[name] = np.zeros_like(p.data)
        u = state.u[name]
        scratch = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += scratch
        u *= state.beta2
        np.maximum(u, np.abs(g, out=scratch), out=u)
        if state.alpha == 0.0:
            continue
        np.add(u, state.epsilon, out=scratch)
        if state.epsilon > 0:
            np.divide(m, scratch, out=scratch)
        else:
            # zero-gradient coordinates from a zero state have m = u = 0; scratch already holds 0 there
            np.divide(m, scratch, out=scratch, where=scratch > 0)
        scratch *= lr
        p.data -= scratch
