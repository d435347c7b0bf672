"""Raw numpy kernels with hand-written backward passes.

All image tensors are NHWC. Convolution weights are (C_out, C_in, kh, kw).
These functions know nothing about the graph; :mod:`weakseg.autodiff.tensor`
wraps them into differentiable ops.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


def _pad_amount(pad, k: int) -> int:
    if pad == "same":
        return k // 2
    if pad == "valid":
        return 0
    if isinstance(pad, int) and pad >= 0:
        return pad
    raise ShapeError(f"unsupported padding {pad!r}")


def conv2d_forward(x, w, b, stride: int = 1, pad="same"):
    """Cross-correlate ``x`` (N,H,W,C) with ``w`` (O,C,kh,kw).

    Returns ``(out, cache)``; ``cache`` feeds :func:`conv2d_backward`.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d x and w, got {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d bias shape {b.shape} != ({o},)")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    p = _pad_amount(pad, kh)
    pw = _pad_amount(pad, kw)
    xp = np.pad(x, ((0, 0), (p, p), (pw, pw), (0, 0))) if (p or pw) else np.ascontiguousarray(x)
    hp, wp = xp.shape[1], xp.shape[2]
    if hp < kh or wp < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    geom = (x.shape, xp.shape, w.shape, stride, p, pw, ho, wo, b is not None)
    if stride == 1:
        out, saved = _shift_forward(xp, w, ho, wo)
    else:
        out, saved = _im2col_forward(xp, w, stride, ho, wo)
    if b is not None:
        out += b
    return out, (geom, saved)


def _shift_forward(xp, w, ho, wo):
    # Output pixel q (flat index into the padded grid) reads tap (i, j) at
    # q + i*wp + j, so each tap is one GEMM over a contiguous row block.
    n, hp, wp, c = xp.shape
    o, _, kh, kw = w.shape
    flat = xp.reshape(-1, c)
    m = (n - 1) * hp * wp + (ho - 1) * wp + wo
    taps = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # (kh, kw, C, O)
    acc = np.zeros((n * hp * wp, o), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            acc[:m] += flat[off:off + m] @ taps[i, j]
    out = acc.reshape(n, hp, wp, o)[:, :ho, :wo]
    return np.ascontiguousarray(out), (flat, taps, m)


def _im2col_forward(xp, w, stride, ho, wo):
    n, hp, wp, c = xp.shape
    o, _, kh, kw = w.shape
    # columns ordered (kh, kw, C) so every copy below is contiguous in C
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o)
    return out, (cols, wmat)


def conv2d_backward(grad_out, cache, need_x: bool = True):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`.

    With ``need_x=False`` the input gradient is skipped and returned as None.
    """
    geom, saved = cache
    x_shape, xp_shape, w_shape, stride, p, pw, ho, wo, has_bias = geom
    n, hp, wp, c = xp_shape
    o, _, kh, kw = w_shape
    if grad_out.shape != (n, ho, wo, o):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, ho, wo, o)}")
    grad_b = grad_out.sum(axis=(0, 1, 2)) if has_bias else None
    if stride == 1:
        flat, taps, m = saved
        gfull = np.zeros((n, hp, wp, o), dtype=grad_out.dtype)
        gfull[:, :ho, :wo] = grad_out
        g = gfull.reshape(-1, o)[:m]
        grad_taps = np.empty((kh, kw, c, o), dtype=grad_out.dtype)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                grad_taps[i, j] = flat[off:off + m].T @ g
        grad_w = grad_taps.transpose(3, 2, 0, 1)
        if not need_x:
            return None, grad_w, grad_b
        dflat = np.zeros((n * hp * wp, c), dtype=grad_out.dtype)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                dflat[off:off + m] += g @ taps[i, j].T
        dxp = dflat.reshape(n, hp, wp, c)
    else:
        cols, wmat = saved
        g = grad_out.reshape(-1, o)
        grad_w = (g.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        if not need_x:
            return None, grad_w, grad_b
        dcols = (g @ wmat).reshape(n, ho, wo, kh, kw, c)
        dxp = np.zeros(xp_shape, dtype=grad_out.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    h, wd = x_shape[1], x_shape[2]
    grad_x = dxp[:, p:p + h, pw:pw + wd, :]
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


def logistic_forward(x):
    """Numerically stable logistic: exp(-log(1 + exp(-x)))."""
    # log(1 + exp(-x)) evaluated as logaddexp(0, -x) never overflows
    return np.exp(-np.logaddexp(0, -x)).astype(x.dtype, copy=False)


def logistic_backward(grad_out, y):
    return grad_out * y * (1 - y)


def max_pool2_forward(x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def max_pool2_backward(grad_out, cache):
    shape, idx = cache
    n, h, w, c = shape
    onehot = (idx[..., None] == np.arange(4)).astype(grad_out.dtype)
    g = onehot * grad_out[..., None]
    g = g.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return g.reshape(shape)


def upsample2_forward(x):
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(grad_out):
    n, h, w, c = grad_out.shape
    return grad_out.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
