"""Layers and losses built on :mod:`fare.tensor_core.tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make, absolute, mean_all, relu, reshape, row_norm, sub


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (b, n) and ``weight`` (n, m)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear shape mismatch: x {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"linear bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g, send):
        send(x, g @ weight.data.T)
        send(weight, x.data.T @ g)
        if bias is not None:
            send(bias, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


_COLS_BUDGET = 2 << 20  # bytes of im2col scratch per chunk


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # xp (b, c, H, W), already padded -> cols (b, c*kh*kw, oh*ow); pixel axis stays contiguous
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    cols = np.empty((xp.shape[0], xp.shape[1], kh, kw, oh, ow))
    cols[...] = win.transpose(0, 1, 4, 5, 2, 3)
    return cols.reshape(xp.shape[0], -1, oh * ow)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Shapes: ``x`` (b, c_in, h, w), ``kernel`` (c_out, c_in, kh, kw), ``bias`` (c_out,).
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    b, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise ValueError(f"conv2d channel mismatch: input has {c_in}, kernel expects {kc}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({c_out},)")

    oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    kmat = kernel.data.reshape(c_out, -1)
    # im2col is built chunk by chunk (and rebuilt in backward) so the temporaries stay small
    step = max(1, _COLS_BUDGET // (kmat.shape[1] * oh * ow * 8))
    chunks = [slice(s, min(s + step, b)) for s in range(0, b, step)]
    out = np.empty((b, c_out, oh * ow))
    for sl in chunks:
        np.matmul(kmat, _im2col(xp[sl], kh, kw, stride, oh, ow), out=out[sl])
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, c_out, oh, ow)

    def backward(g, send):
        g3 = g.reshape(b, c_out, oh * ow)
        dk = np.zeros_like(kmat) if kernel.requires_grad else None
        dxp = np.zeros((b, c_in, hp, wp)) if x.requires_grad else None
        for sl in chunks:
            gs = g3[sl]
            if dk is not None:
                cols = _im2col(xp[sl], kh, kw, stride, oh, ow)
                dk += np.matmul(gs, cols.transpose(0, 2, 1)).sum(axis=0)
            if dxp is not None:
                dcols = np.matmul(kmat.T, gs).reshape(-1, c_in, kh, kw, oh, ow)
                view = dxp[sl]
                for i in range(kh):
                    for j in range(kw):
                        view[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
        if dk is not None:
            send(kernel, dk.reshape(kernel.shape))
        if bias is not None:
            send(bias, g3.sum(axis=(0, 2)))
        if dxp is not None:
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            send(x, np.ascontiguousarray(dxp))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def avgpool(x: Tensor, kh: int, kw: int) -> Tensor:
    """Non-overlapping mean pooling over the last two axes with window (kh, kw)."""
    if x.ndim != 4:
        raise ValueError(f"avgpool expects a 4-D tensor, got {x.shape}")
    b, c, h, w = x.shape
    if h % kh or w % kw:
        raise ValueError(f"spatial dims {h}x{w} not divisible by pool window {kh}x{kw}")
    scale = 1.0 / (kh * kw)
    out = x.data[:, :, 0::kh, 0::kw].copy()
    for i in range(kh):
        for j in range(kw):
            if i or j:
                out += x.data[:, :, i::kh, j::kw]
    out *= scale

    def backward(g, send):
        gs = g * scale
        dx = np.empty((b, c, h, w))
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i::kh, j::kw] = gs
        send(x, dx)

    return _make(out, (x,), backward)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; spatial dims must be even."""
    return avgpool(x, 2, 2)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = 2.0) -> Tensor:
    """Mean hinge ``max(|a - p| - |a - n| + margin, 0)`` with Euclidean distances."""
    if not (anchor.shape == positive.shape == negative.shape) or anchor.ndim != 2:
        raise ValueError(
            f"triplet shapes must match and be 2-D: {anchor.shape}, {positive.shape}, {negative.shape}"
        )
    if margin < 0:
        raise ValueError("margin must be non-negative")
    d_pos = row_norm(sub(anchor, positive))
    d_neg = row_norm(sub(anchor, negative))
    return mean_all(relu(d_pos - d_neg + margin))


def mae_loss(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if x.shape != x_hat.shape:
        raise ValueError(f"mae_loss shape mismatch: {x.shape} vs {x_hat.shape}")
    return mean_all(absolute(sub(x, x_hat)))
