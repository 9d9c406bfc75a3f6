"""Reverse-mode autodiff over float64 numpy arrays."""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-dimensional float64 array that records the ops applied to it.

    Calling :meth:`backward` on a scalar result accumulates ``d result / d t``
    into ``t.grad`` for every upstream tensor with ``requires_grad`` set.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_prev", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._prev:
                if p.node_id not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {self.node_id: np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if not node._prev:
                node._accumulate(g)
                continue
            node._backward(g, grads)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, wiring it into the graph when any parent needs gradients.

    ``backward(g, send)`` receives the upstream gradient and a ``send(parent, grad)``
    callback.
    """
    out = Tensor(data)
    live = [p for p in parents if _needs_graph(p)]
    if _grad_enabled and live:
        out.requires_grad = True
        out._prev = tuple(live)

        def _run(g, grads):
            def send(parent: Tensor, pg: np.ndarray) -> None:
                if not _needs_graph(parent):
                    return
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg

            backward(g, send)

        out._backward = _run
    return out


def _needs_graph(t: Tensor) -> bool:
    return t.requires_grad


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, send):
        send(a, _unbroadcast(g, a.shape))
        send(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, send):
        send(a, _unbroadcast(g, a.shape))
        send(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, send):
        send(a, _unbroadcast(g * b.data, a.shape))
        send(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g, send):
        send(a, g @ b.data.T)
        send(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g, send):
        send(a, np.broadcast_to(g, a.shape).copy())

    return _make(np.asarray(a.data.sum()), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def backward(g, send):
        send(a, np.broadcast_to(np.asarray(g) / n, a.shape).copy())

    return _make(np.asarray(a.data.mean()), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g, send):
        send(a, g.reshape(a.shape))

    return _make(a.data.reshape(tuple(shape)), (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g, send):
        send(a, g * (a.data > 0))

    return _make(out, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    # sign(0) = 0 gives the zero subgradient at the kink
    sign = np.sign(a.data)

    def backward(g, send):
        send(a, g * sign)

    return _make(np.abs(a.data), (a,), backward)


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row of a 2-D tensor; subgradient 0 at the origin."""
    if a.ndim != 2:
        raise ValueError(f"row_norm expects a 2-D tensor, got shape {a.shape}")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1))

    def backward(g, send):
        safe = np.where(norms > 0, norms, 1.0)
        scale = np.where(norms > 0, g / safe, 0.0)
        send(a, a.data * scale[:, None])

    return _make(norms, (a,), backward)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather ``a[idx]`` along the first axis; repeated indices accumulate in backward."""
    idx = np.asarray(idx, dtype=np.intp)

    def backward(g, send):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        send(a, out)

    return _make(a.data[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g, send):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            send(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
