from __future__ import annotations

import numpy as np


class TrainingError(RuntimeError):
    pass


def adam_step(params, grads, m, v, lr, beta1, beta2, eps, t):
    """One in-place Adam update over parallel lists of arrays.

    ``m`` and ``v`` are the first/second moment buffers (mutated); ``t`` is
    the 1-based step count used for bias correction.
    """
    if t < 1:
        raise ValueError(f"Adam step count must be >= 1, got {t}")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at step {t} (parameter #{i})")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return params


class Adam:
    """Adam over a list of :class:`~weakseg.autodiff.tensor.Tensor` leaves."""

    def __init__(self, params, lr=2e-4, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        try:
            adam_step([p.data for p in self.params], [p.grad for p in self.params],
                      self.m, self.v, self.lr, self.beta1, self.beta2, self.eps, self.t)
        except TrainingError:
            self.t -= 1
            raise

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m.copy()
            out[f"v.{i}"] = v.copy()
        return out

    def load_state_dict(self, state, t: int):
        for i in range(len(self.params)):
            self.m[i][...] = state[f"m.{i}"]
            self.v[i][...] = state[f"v.{i}"]
        self.t = t
