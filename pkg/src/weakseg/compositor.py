"""Alpha-blend superimposition and the two fake images built from it.

Works on plain numpy arrays and on graph tensors alike, so the same code
builds fakes for evaluation and for differentiable generator updates.
Images are (..., H, W, C); masks are (..., H, W) or (..., H, W, 1) and are
broadcast across channels.
"""
from __future__ import annotations

import numpy as np

from .autodiff.kernels import ShapeError
from .autodiff.tensor import Tensor


def _mask_for(i, y):
    if tuple(y.shape) == tuple(i.shape[:-1]):
        new = tuple(y.shape) + (1,)
        return y.reshape(new) if isinstance(y, Tensor) else np.asarray(y).reshape(new)
    if tuple(y.shape) == tuple(i.shape[:-1]) + (1,):
        return y
    raise ShapeError(f"mask shape {tuple(y.shape)} does not match image {tuple(i.shape)}")


def superimpose(i, i_ctx, y):
    """``y * i + (1 - y) * i_ctx`` per pixel and channel."""
    if tuple(i.shape) != tuple(i_ctx.shape):
        raise ShapeError(f"image {tuple(i.shape)} and context {tuple(i_ctx.shape)} differ")
    y = _mask_for(i, y)
    if isinstance(y, Tensor) or isinstance(i, Tensor) or isinstance(i_ctx, Tensor):
        return y * i + (1.0 - y) * i_ctx
    return y * np.asarray(i) + (1.0 - y) * np.asarray(i_ctx)


def make_fake_positive(i_r, i_ctx, y_hat):
    """Object cut from ``i_r`` by the predicted mask, pasted into the context."""
    return superimpose(i_r, i_ctx, y_hat)


def make_fake_negative(i_r, i_ctx, y_hat):
    """Context pasted over the predicted object region of ``i_r``."""
    return superimpose(i_r, i_ctx, 1.0 - y_hat)
