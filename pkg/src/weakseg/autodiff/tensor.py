"""A small reverse-mode autodiff graph over numpy arrays."""
from __future__ import annotations

import numpy as np

from . import kernels
from .kernels import ShapeError


class Tensor:
    """An array node in a dynamically built computation graph.

    Leaves created with ``requires_grad=True`` are trainable parameters; their
    ``grad`` accumulates across :meth:`backward` calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make numpy defer to our reflected operators (ndarray * Tensor -> Tensor)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic introspection --------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    # -- graph machinery -------------------------------------------------
    def backward(self, grad=None):
        """Propagate gradients from this node to every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def mean(self):
        return mean(self)

    def sum(self):
        return total(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _scalar_like(x, ref: Tensor):
    """Wrap python scalars without promoting float32 graphs to float64."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind == "f" and ref.dtype.kind == "f" and arr.dtype != ref.dtype and arr.ndim == 0:
        arr = arr.astype(ref.dtype)
    return Tensor(arr)


# -- elementwise arithmetic ------------------------------------------------
def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _scalar_like(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = _scalar_like(a, b)
    else:
        b = _scalar_like(b, a)
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _scalar_like(b, a)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    x = as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _node(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def minimum(x, cap: float) -> Tensor:
    """``min(x, cap)`` with zero gradient once the cap binds."""
    x = as_tensor(x)
    xd = x.data
    below = xd < cap
    return _node(np.minimum(xd, cap).astype(xd.dtype), (x,), lambda g: (g * below,))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    shape = x.shape
    return _node(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.broadcast_to(g / n, shape).astype(x.dtype),))


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).astype(x.dtype),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x, index) -> Tensor:
    """Differentiable basic/advanced indexing ``x[index]``."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _node(x.data[index], (x,), back)


# -- network layers --------------------------------------------------------
def conv2d(x, w, b=None, stride: int = 1, pad="same") -> Tensor:
    x = as_tensor(x)
    w = as_tensor(w)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    out, cache = kernels.conv2d_forward(x.data, w.data, None if b is None else parents[2].data,
                                        stride, pad)

    def back(g):
        gx, gw, gb = kernels.conv2d_backward(g, cache, need_x=x.requires_grad)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _node(out, parents, back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _node(kernels.relu_forward(xd), (x,), lambda g: (kernels.relu_backward(g, xd),))


def logistic(x) -> Tensor:
    x = as_tensor(x)
    y = kernels.logistic_forward(x.data)
    return _node(y, (x,), lambda g: (kernels.logistic_backward(g, y),))


def max_pool2(x) -> Tensor:
    x = as_tensor(x)
    out, cache = kernels.max_pool2_forward(x.data)
    return _node(out, (x,), lambda g: (kernels.max_pool2_backward(g, cache),))


def upsample2(x) -> Tensor:
    x = as_tensor(x)
    return _node(kernels.upsample2_forward(x.data), (x,),
                 lambda g: (kernels.upsample2_backward(g),))


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along the channel axis (last by default)."""
    ts = tuple(as_tensor(t) for t in tensors)
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat shape mismatch: {ref} vs {t.shape}")
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _node(np.concatenate([t.data for t in ts], axis=ax), ts, back)


def global_avg_pool(x) -> Tensor:
    """(N,H,W,C) -> (N,C)."""
    x = as_tensor(x)
    n, h, w, c = x.shape

    def back(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(x.dtype),)

    return _node(x.data.mean(axis=(1, 2)), (x,), back)


def dense(x, w, b) -> Tensor:
    """(N,I) @ (I,O) + (O,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense shape mismatch: {x.shape} @ {w.shape}")
    xd, wd = x.data, w.data
    return _node(xd @ wd + b.data, (x, w, b),
                 lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))
