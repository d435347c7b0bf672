"""Pixel confusion counts and Dice / Jaccard / precision / recall."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff.kernels import ShapeError


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    dice: float
    jaccard: float
    precision: float
    recall: float
    aggregation: str = "micro"
    n_chips: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in ("aggregation", "dice", "jaccard", "precision", "recall", "n_chips")}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def binarize(y_hat, tau: float = 0.5) -> np.ndarray:
    """1 where ``y_hat >= tau``."""
    if not 0 < tau < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    return (np.asarray(y_hat) >= tau).astype(np.uint8)


def confusion(pred, gt) -> Confusion:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return Confusion(tp, fp, fn, pred.size - tp - fp - fn)


def _ratio(num: int, den: int, vacuous: bool) -> float:
    if den == 0:
        return 1.0 if vacuous else 0.0
    return num / den


def metrics(c: Confusion, aggregation: str = "micro", n_chips: int = 1) -> MetricsReport:
    """Metrics from counts. A 0/0 ratio is 1.0 when tp = fp = fn = 0, else 0.0."""
    vacuous = c.tp == 0 and c.fp == 0 and c.fn == 0
    return MetricsReport(
        dice=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, vacuous),
        jaccard=_ratio(c.tp, c.tp + c.fp + c.fn, vacuous),
        precision=_ratio(c.tp, c.tp + c.fp, vacuous),
        recall=_ratio(c.tp, c.tp + c.fn, vacuous),
        aggregation=aggregation,
        n_chips=n_chips,
    )


def aggregate(confusions, aggregation: str = "micro") -> MetricsReport:
    """Micro: metrics of the summed counts. Macro: mean of per-chip metrics."""
    confusions = list(confusions)
    if not confusions:
        raise EvaluationError("cannot aggregate an empty set of chips")
    n = len(confusions)
    if aggregation == "micro":
        total = Confusion()
        for c in confusions:
            total = total + c
        return metrics(total, "micro", n)
    if aggregation == "macro":
        per = [metrics(c) for c in confusions]
        return MetricsReport(
            dice=float(np.mean([m.dice for m in per])),
            jaccard=float(np.mean([m.jaccard for m in per])),
            precision=float(np.mean([m.precision for m in per])),
            recall=float(np.mean([m.recall for m in per])),
            aggregation="macro",
            n_chips=n,
        )
    raise ValueError(f"unknown aggregation {aggregation!r}")


def eval_dataset(state, idx, aggregation: str = "micro", tau: float = 0.5) -> MetricsReport:
    """Predict every chip of ``idx``, binarize at ``tau`` and aggregate confusions."""
    from .dataio import load_mask
    from .trainer import predict_index

    if not idx.chips:
        raise EvaluationError("the evaluation index has no chips")
    for ch in idx.chips:
        if ch.gt_mask_path is None:
            raise EvaluationError(f"chip {list(ch.tile_id)} has no gt mask")
    preds = predict_index(state, idx)
    confs = [confusion(binarize(preds[ch.tile_id], tau), load_mask(idx.resolve(ch.gt_mask_path)))
             for ch in idx.chips]
    return aggregate(confs, aggregation)
