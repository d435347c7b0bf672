"""Segmentation generator (tiny U-Net) and image discriminator."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .kernels import ShapeError
from .tensor import Tensor


class Module:
    """Holds an ordered mapping of named parameter tensors."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise KeyError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            p = self.params[k]
            if v.shape != p.shape:
                raise ShapeError(f"{k}: stored shape {v.shape} != {p.shape}")
            p.data = np.array(v, dtype=p.dtype)
            p.grad = np.zeros_like(p.data)

    def astype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def _conv(self, rng, name, cin, cout, k=3, zero=False):
        fan_in = cin * k * k
        if zero:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
        self._add(f"{name}.w", w.astype(self.dtype))
        self._add(f"{name}.b", np.zeros(cout, dtype=self.dtype))

    def conv(self, x, name, stride=1, pad="same"):
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, pad)


class SegNet(Module):
    """Three-level U-Net: RGB + pseudo-label channel in, one probability map out.

    ``channels`` are the encoder widths per level; the decoder mirrors them
    with skip concatenations. ``zero_final`` zeroes the 1x1 output conv so a
    fresh network predicts exactly 0.5 everywhere. ``head_bias`` sets the
    initial output logit offset (a foreground prior).
    """

    def __init__(self, in_channels: int = 4, channels=(16, 32, 64), seed: int = 0,
                 zero_final: bool = False, head_bias: float = 0.0, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = self.channels
        self._conv(rng, "enc1a", in_channels, c1)
        self._conv(rng, "enc1b", c1, c1)
        self._conv(rng, "enc2a", c1, c2)
        self._conv(rng, "enc2b", c2, c2)
        self._conv(rng, "mid_a", c2, c3)
        self._conv(rng, "mid_b", c3, c3)
        self._conv(rng, "dec2a", c3 + c2, c2)
        self._conv(rng, "dec2b", c2, c2)
        self._conv(rng, "dec1a", c2 + c1, c1)
        self._conv(rng, "dec1b", c1, c1)
        self._conv(rng, "head", c1, 1, k=1, zero=zero_final)
        self.params["head.b"].data[...] = 0.0 if zero_final else head_bias

    @property
    def depth(self) -> int:
        return len(self.channels) - 1

    def logits(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeError(f"SegNet expects (N,H,W,{self.in_channels}), got {x.shape}")
        h, w = x.shape[1:3]
        step = 2 ** self.depth
        if h % step or w % step:
            raise ShapeError(f"input side {h}x{w} not divisible by {step}")
        e1 = T.relu(self.conv(T.relu(self.conv(x, "enc1a")), "enc1b"))
        e2 = T.relu(self.conv(T.relu(self.conv(T.max_pool2(e1), "enc2a")), "enc2b"))
        m = T.relu(self.conv(T.relu(self.conv(T.max_pool2(e2), "mid_a")), "mid_b"))
        d2 = T.concat([T.upsample2(m), e2])
        d2 = T.relu(self.conv(T.relu(self.conv(d2, "dec2a")), "dec2b"))
        d1 = T.concat([T.upsample2(d2), e1])
        d1 = T.relu(self.conv(T.relu(self.conv(d1, "dec1a")), "dec1b"))
        return self.conv(d1, "head")

    def __call__(self, x) -> Tensor:
        return T.logistic(self.logits(x))


class DiscNet(Module):
    """Strided conv encoder, global average pool, dense logistic head."""

    def __init__(self, in_channels: int = 3, channels=(16, 32, 64, 64), seed: int = 0,
                 zero_head: bool = False, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        cin = in_channels
        for i, c in enumerate(self.channels):
            self._conv(rng, f"block{i}", cin, c)
            cin = c
        if zero_head:
            w = np.zeros((cin, 1))
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / cin), size=(cin, 1))
        self._add("head.w", w.astype(self.dtype))
        self._add("head.b", np.zeros(1, dtype=self.dtype))

    def logits(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[-1] != self.in_channels:
            raise ShapeError(f"DiscNet expects (N,H,W,{self.in_channels}), got {x.shape}")
        for i in range(len(self.channels)):
            x = T.relu(self.conv(x, f"block{i}", stride=2))
        pooled = T.global_avg_pool(x)
        return T.reshape(T.dense(pooled, self.params["head.w"], self.params["head.b"]), (-1,))

    def __call__(self, x) -> Tensor:
        """Probability per batch element, shape (N,)."""
        return T.logistic(self.logits(x))
