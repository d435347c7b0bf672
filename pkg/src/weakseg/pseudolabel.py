"""Buffered pseudo labels from point labels.

Every point is splatted as a normalized bivariate Gaussian density evaluated
at pixel centres ``(c + 0.5, r + 0.5)``; overlapping splats combine by
element-wise max. The canvas is scaled by ``csm`` and thresholded at
``gamma``.

For isotropic ``sigma = s^2 I`` a single point yields a disk of radius
``s * sqrt(2 ln(csm / (2 pi s^2 gamma)))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LabelConfigError(ValueError):
    pass


@dataclass
class LabelConfig:
    sigma: np.ndarray = field(default_factory=lambda: np.diag([16.0, 16.0]))
    csm: float = 7000.0
    gamma: float = 10.0
    rho: float = 0.7

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        check_sigma(self.sigma)
        for name in ("csm", "gamma", "rho"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise LabelConfigError(f"{name} must be a positive finite number, got {v!r}")

    @classmethod
    def isotropic(cls, sigma_px: float, **kw) -> "LabelConfig":
        return cls(sigma=np.eye(2) * sigma_px ** 2, **kw)

    def buffer_radius(self) -> float:
        """Analytic pseudo-label radius for an isotropic sigma (0 if empty)."""
        s2 = self.sigma[0, 0]
        ratio = self.csm / (2 * np.pi * s2 * self.gamma)
        return float(np.sqrt(2 * s2 * np.log(ratio))) if ratio > 1 else 0.0

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.tolist(), "csm": self.csm, "gamma": self.gamma, "rho": self.rho}


def check_sigma(sigma: np.ndarray):
    if sigma.shape != (2, 2) or not np.all(np.isfinite(sigma)):
        raise LabelConfigError(f"sigma must be a finite 2x2 matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T):
        raise LabelConfigError("sigma must be symmetric")
    if np.linalg.eigvalsh(sigma).min() <= 0:
        raise LabelConfigError("sigma must be positive definite")


def gaussian_splat(points, sigma, h: int, w: int) -> np.ndarray:
    """Max over points of the MVN density N(u; point, sigma) at every pixel centre."""
    sigma = np.asarray(sigma, dtype=np.float64)
    check_sigma(sigma)
    canvas = np.zeros((h, w))
    if len(points) == 0:
        return canvas
    inv = np.linalg.inv(sigma)
    norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(sigma)))
    ys = np.arange(h) + 0.5
    xs = np.arange(w) + 0.5
    for px, py in points:
        dx = xs[None, :] - px
        dy = ys[:, None] - py
        q = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy
        np.maximum(canvas, norm * np.exp(-0.5 * q), out=canvas)
    return canvas


def make_pseudo_label(points, cfg: LabelConfig, h: int, w: int) -> np.ndarray:
    """Binary (H, W) uint8 mask: 1 where csm * canvas >= gamma."""
    canvas = gaussian_splat(points, cfg.sigma, h, w)
    return (cfg.csm * canvas >= cfg.gamma).astype(np.uint8)
