"""Discriminator, generator and localization losses (all in nats, minimized).

Probabilities are clamped to ``[EPS, 1 - EPS]`` before any log. Inputs may be
numpy arrays or graph tensors; results are graph tensors so generator and
discriminator losses can be back-propagated.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import tensor as T
from .autodiff.kernels import ShapeError
from .autodiff.tensor import Tensor

EPS = 1e-7


class LossError(FloatingPointError):
    pass


def _checked(x, what: str) -> Tensor:
    x = T.as_tensor(x)
    if not np.all(np.isfinite(x.data)):
        raise LossError(f"non-finite value in {what}")
    return x


def _log_clamped(p) -> Tensor:
    return T.log(T.clip(p, EPS, 1.0 - EPS))


def _log1m_clamped(p) -> Tensor:
    return T.log(1.0 - T.clip(p, EPS, 1.0 - EPS))


def discriminator_loss(real, fake) -> Tensor:
    """``-mean[log D(real)] - mean[log(1 - D(fake))]``."""
    real = _checked(real, "discriminator output on real input")
    fake = _checked(fake, "discriminator output on fake input")
    return -(T.mean(_log_clamped(real)) + T.mean(_log1m_clamped(fake)))


def loss_d1(d1_real, d1_fake) -> Tensor:
    """D1 sees the real positive tile and the object pasted into its context."""
    return discriminator_loss(d1_real, d1_fake)


def loss_d2(d2_real, d2_fake) -> Tensor:
    """D2 sees the real context and the context pasted over the object."""
    return discriminator_loss(d2_real, d2_fake)


def loss_loc(y_hat, y_tilde, rho: float) -> Tensor:
    """Mean binary cross-entropy of ``y_hat`` against the pseudo label, capped at ``rho``."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    y_hat = _checked(y_hat, "predicted mask")
    y_tilde = np.asarray(y_tilde.data if isinstance(y_tilde, Tensor) else y_tilde)
    if tuple(y_hat.shape) != tuple(y_tilde.shape):
        raise ShapeError(f"prediction {tuple(y_hat.shape)} and pseudo label {y_tilde.shape} differ")
    t = y_tilde.astype(y_hat.dtype)
    bce = -T.mean(t * _log_clamped(y_hat) + (1.0 - t) * _log1m_clamped(y_hat))
    return T.minimum(bce, rho)


def bce_loss(y_hat, target) -> Tensor:
    """Uncapped mean binary cross-entropy; the fully supervised objective."""
    y_hat = _checked(y_hat, "predicted mask")
    t = np.asarray(target).astype(y_hat.dtype)
    if tuple(y_hat.shape) != t.shape:
        raise ShapeError(f"prediction {tuple(y_hat.shape)} and target {t.shape} differ")
    return -T.mean(t * _log_clamped(y_hat) + (1.0 - t) * _log1m_clamped(y_hat))


def loss_g(d1_fake, d2_fake, l_loc, saturating: bool = False) -> Tensor:
    """Generator loss. Pass ``d2_fake=None`` when the context discriminator is off.

    Saturating form: ``mean log(1 - D1(F1)) + mean log(1 - D2(F2)) + l_loc``.
    Non-saturating form: ``-mean log D1(F1) - mean log D2(F2) + l_loc``.
    """
    fakes = [_checked(d1_fake, "D1 output on fake")]
    if d2_fake is not None:
        fakes.append(_checked(d2_fake, "D2 output on fake"))
    l_loc = _checked(l_loc, "localization loss")
    adv = None
    for f in fakes:
        term = T.mean(_log1m_clamped(f)) if saturating else -T.mean(_log_clamped(f))
        adv = term if adv is None else adv + term
    return adv + l_loc


@dataclass
class LossReport:
    l_d1: float = 0.0
    l_d2: float = 0.0
    l_g_adv: float = 0.0
    l_loc: float = 0.0
    total_g: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v):
                raise LossError(f"{k} is not finite ({v})")

    def as_row(self) -> list[float]:
        return [self.l_d1, self.l_d2, self.l_g_adv, self.l_loc, self.total_g]


def combined_objective(report: LossReport) -> float:
    """Diagnostic sum of generator and both discriminator losses."""
    return report.l_g_adv + report.l_loc + report.l_d1 + report.l_d2
