"""Joint adversarial training of the segmenter and the two discriminators.

Per batch: pseudo labels from points, one forward pass of the segmenter,
a D1 step on (real tile, object pasted into context), a D2 step on
(real context, context pasted over the object), then a segmenter step on
the generator loss plus the capped localization loss. Discriminator steps
see the predicted mask as a constant; the segmenter step lets gradients
flow through the compositing into the mask.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .autodiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .autodiff.kernels import ShapeError
from .autodiff.nets import DiscNet, SegNet
from .autodiff.optim import Adam, TrainingError
from .compositor import make_fake_negative, make_fake_positive
from .dataio import DatasetIndex, load_chip, load_mask
from .grid_context import ContextMap, sample_context
from .losses import LossReport
from .pseudolabel import LabelConfig, make_pseudo_label

log = logging.getLogger(__name__)

CONTEXT_MODES = ("original", "blank", "red", "noise")
LOSS_VARIANTS = ("saturating", "nonsaturating")
OBJECTIVES = ("p2p", "supervised")
CSV_COLUMNS = ("step", "l_d1", "l_d2", "l_g_adv", "l_loc", "total_g")
# initial foreground probability of the segmenter; keeps the first
# localization loss well under the cap so guidance is active from step one
FOREGROUND_PRIOR = 0.1


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    label_cfg: LabelConfig = field(default_factory=LabelConfig)
    k_contexts: int = 8
    batch_size: int = 8
    epochs: int = 20
    lr: float = 2e-4
    seed: int = 0
    context_mode: str = "original"
    loss_variant: str = "nonsaturating"
    use_d2: bool = True
    # "supervised" swaps the weak objective for plain cross-entropy on gt masks
    objective: str = "p2p"

    def __post_init__(self):
        if isinstance(self.label_cfg, dict):
            self.label_cfg = LabelConfig(**self.label_cfg)
        for name in ("k_contexts", "batch_size", "epochs"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise TrainConfigError(f"{name} must be an integer >= 1, got {v!r}")
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0):
            raise TrainConfigError(f"lr must be a positive finite number, got {self.lr!r}")
        if self.context_mode not in CONTEXT_MODES:
            raise TrainConfigError(f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        if self.loss_variant not in LOSS_VARIANTS:
            raise TrainConfigError(f"loss_variant must be one of {LOSS_VARIANTS}, got {self.loss_variant!r}")
        if self.objective not in OBJECTIVES:
            raise TrainConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")

    def to_dict(self) -> dict:
        return {
            "label_cfg": self.label_cfg.to_dict(),
            "k_contexts": int(self.k_contexts),
            "batch_size": int(self.batch_size),
            "epochs": int(self.epochs),
            "lr": float(self.lr),
            "seed": int(self.seed),
            "context_mode": self.context_mode,
            "loss_variant": self.loss_variant,
            "use_d2": bool(self.use_d2),
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class Batch:
    """Float32 arrays: images (N,H,W,3), masks (N,H,W,1)."""
    i_r: np.ndarray
    y_tilde: np.ndarray
    i_ctx: np.ndarray
    gt: np.ndarray | None = None


@dataclass
class TrainState:
    cfg: TrainConfig
    seg: SegNet
    d1: DiscNet
    d2: DiscNet
    opt_s: Adam
    opt_d1: Adam
    opt_d2: Adam
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


def init_state(cfg: TrainConfig, zero_final: bool = False, dtype=np.float32) -> TrainState:
    """Fresh networks and optimizers; every random stream derives from ``cfg.seed``.

    ``dtype=np.float64`` gives a state suitable for finite-difference checks.
    """
    ss = np.random.SeedSequence(cfg.seed)
    s_seg, s_d1, s_d2, s_data = ss.spawn(4)
    seg = SegNet(seed=int(s_seg.generate_state(1)[0]), zero_final=zero_final,
                 head_bias=math.log(FOREGROUND_PRIOR / (1 - FOREGROUND_PRIOR)), dtype=dtype)
    d1 = DiscNet(seed=int(s_d1.generate_state(1)[0]), dtype=dtype)
    d2 = DiscNet(seed=int(s_d2.generate_state(1)[0]), dtype=dtype)
    return TrainState(
        cfg=cfg, seg=seg, d1=d1, d2=d2,
        opt_s=Adam(seg.parameters(), lr=cfg.lr),
        opt_d1=Adam(d1.parameters(), lr=cfg.lr),
        opt_d2=Adam(d2.parameters(), lr=cfg.lr),
        rng=np.random.default_rng(s_data),
    )


# -- context transforms -----------------------------------------------------------
def apply_context_mode(i_ctx: np.ndarray, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Replace a context raster by one of the ablation variants."""
    i_ctx = np.asarray(i_ctx)
    if mode == "original":
        return i_ctx
    if mode == "blank":
        return np.zeros_like(i_ctx)
    if mode == "red":
        out = np.zeros_like(i_ctx)
        out[..., 0] = 1.0
        return out
    if mode == "noise":
        return np.clip(rng.normal(0.5, 0.25, size=i_ctx.shape), 0.0, 1.0).astype(i_ctx.dtype)
    raise TrainConfigError(f"context_mode must be one of {CONTEXT_MODES}, got {mode!r}")


# -- one optimisation step ----------------------------------------------------------
def _abort(step: int, what: str, parts: dict):
    detail = ", ".join(f"{k}={v:.6g}" for k, v in parts.items())
    raise TrainingError(f"non-finite {what} at step {step} ({detail})")


def _value(t, step: int, what: str, parts: dict) -> float:
    v = float(t.item())
    parts[what] = v
    if not math.isfinite(v):
        _abort(step, what, parts)
    return v


def _seg_input(b: Batch):
    return np.concatenate([b.i_r, b.y_tilde], axis=-1)


def generator_objective(state: TrainState, b: Batch, y_hat=None):
    """``(loss_g, loss_loc)`` as graph tensors, fakes built from the differentiable prediction."""
    cfg = state.cfg
    if y_hat is None:
        y_hat = state.seg(_seg_input(b))
    d1_fake = state.d1(make_fake_positive(b.i_r, b.i_ctx, y_hat))
    d2_fake = state.d2(make_fake_negative(b.i_r, b.i_ctx, y_hat)) if cfg.use_d2 else None
    l_loc = losses.loss_loc(y_hat, b.y_tilde, cfg.label_cfg.rho)
    l_g = losses.loss_g(d1_fake, d2_fake, l_loc, saturating=cfg.loss_variant == "saturating")
    return l_g, l_loc


def train_step(state: TrainState, b: Batch) -> tuple[TrainState, LossReport]:
    """D1 step, D2 step (if enabled), then S step. Mutates and returns ``state``."""
    parts: dict = {}
    try:
        return _train_step(state, b, parts)
    except losses.LossError as exc:
        _abort(state.step + 1, f"loss ({exc})", parts)


def _train_step(state: TrainState, b: Batch, parts: dict):
    cfg = state.cfg
    k = state.step + 1
    y_hat = state.seg(_seg_input(b))

    if cfg.objective == "supervised":
        if b.gt is None:
            raise TrainConfigError("supervised objective needs gt masks in every batch")
        state.opt_s.zero_grad()
        l_sup = losses.bce_loss(y_hat, b.gt)
        v = _value(l_sup, k, "l_loc", parts)
        l_sup.backward()
        state.opt_s.step()
        state.step = k
        return state, LossReport(l_loc=v, total_g=v)

    # discriminators see the prediction as a constant
    y_const = y_hat.data
    f1 = make_fake_positive(b.i_r, b.i_ctx, y_const)
    f2 = make_fake_negative(b.i_r, b.i_ctx, y_const)

    state.opt_d1.zero_grad()
    l_d1 = losses.loss_d1(state.d1(b.i_r), state.d1(f1))
    v_d1 = _value(l_d1, k, "l_d1", parts)
    l_d1.backward()
    state.opt_d1.step()

    v_d2 = 0.0
    if cfg.use_d2:
        state.opt_d2.zero_grad()
        l_d2 = losses.loss_d2(state.d2(b.i_ctx), state.d2(f2))
        v_d2 = _value(l_d2, k, "l_d2", parts)
        l_d2.backward()
        state.opt_d2.step()

    # generator step: fakes rebuilt from the graph prediction
    state.opt_s.zero_grad()
    l_g, l_loc = generator_objective(state, b, y_hat)
    v_loc = _value(l_loc, k, "l_loc", parts)
    v_g = _value(l_g, k, "total_g", parts)
    l_g.backward()
    state.opt_s.step()
    # the generator pass also filled discriminator grads; they are never applied
    state.d1.zero_grad()
    state.d2.zero_grad()

    state.step = k
    return state, LossReport(l_d1=v_d1, l_d2=v_d2, l_g_adv=v_g - v_loc, l_loc=v_loc, total_g=v_g)


# -- data ----------------------------------------------------------------------
class _ChipCache:
    """Loads chips, gt masks and pseudo labels once per training run."""

    def __init__(self, idx: DatasetIndex, label_cfg: LabelConfig):
        self.idx = idx
        self.label_cfg = label_cfg
        self.images: dict = {}
        self.labels: dict = {}
        self.masks: dict = {}

    def image(self, tile) -> np.ndarray:
        if tile not in self.images:
            try:
                ch = self.idx.chip(tile)
            except KeyError:
                raise TrainConfigError(f"context tile {tile} has no chip in the index") from None
            img = load_chip(self.idx.resolve(ch.image_path))
            if img.shape[-1] == 1:
                img = np.repeat(img, 3, axis=-1)
            self.images[tile] = img.astype(np.float32)
        return self.images[tile]

    def label(self, tile) -> np.ndarray:
        if tile not in self.labels:
            t = self.idx.tile_size
            y = make_pseudo_label(self.idx.chip(tile).points, self.label_cfg, t, t)
            self.labels[tile] = y.astype(np.float32)[:, :, None]
        return self.labels[tile]

    def mask(self, tile) -> np.ndarray:
        if tile not in self.masks:
            ch = self.idx.chip(tile)
            if ch.gt_mask_path is None:
                raise TrainConfigError(f"chip {tile} has no gt mask")
            self.masks[tile] = load_mask(self.idx.resolve(ch.gt_mask_path)).astype(np.float32)[:, :, None]
        return self.masks[tile]


def _make_batch(cache: _ChipCache, tiles, contexts, cfg: TrainConfig, rng) -> Batch:
    i_r = np.stack([cache.image(t) for t in tiles])
    y = np.stack([cache.label(t) for t in tiles])
    i_ctx = np.stack([apply_context_mode(cache.image(c), cfg.context_mode, rng) for c in contexts])
    gt = np.stack([cache.mask(t) for t in tiles]) if cfg.objective == "supervised" else None
    return Batch(i_r, y, i_ctx, gt)


def positive_tiles(idx: DatasetIndex) -> list:
    return [ch.tile_id for ch in idx.chips if ch.points]


# -- checkpoints ----------------------------------------------------------------
def state_tensors(state: TrainState) -> dict:
    out = {}
    for prefix, net in (("seg", state.seg), ("d1", state.d1), ("d2", state.d2)):
        for k, v in net.state_dict().items():
            out[f"{prefix}/{k}"] = v
    for prefix, opt in (("opt_s", state.opt_s), ("opt_d1", state.opt_d1), ("opt_d2", state.opt_d2)):
        for k, v in opt.state_dict().items():
            out[f"{prefix}/{k}"] = v
    return out


def save_state(state: TrainState, path):
    meta = {
        "step": state.step,
        "epoch": state.epoch,
        "opt_t": [state.opt_s.t, state.opt_d1.t, state.opt_d2.t],
        "rng": state.rng.bit_generator.state,
        "cfg": state.cfg.to_dict(),
        "history": [[int(s), *r] for s, r in state.history],
    }
    save_checkpoint(path, state_tensors(state), meta)


def load_state(path) -> TrainState:
    tensors, meta = load_checkpoint(path)
    try:
        cfg = TrainConfig.from_dict(meta["cfg"])
        state = init_state(cfg)
        for prefix, net in (("seg", state.seg), ("d1", state.d1), ("d2", state.d2)):
            net.load_state_dict({k[len(prefix) + 1:]: v for k, v in tensors.items()
                                 if k.startswith(prefix + "/")})
        for prefix, opt, t in zip(("opt_s", "opt_d1", "opt_d2"),
                                  (state.opt_s, state.opt_d1, state.opt_d2), meta["opt_t"]):
            opt.load_state_dict({k[len(prefix) + 1:]: v for k, v in tensors.items()
                                 if k.startswith(prefix + "/")}, int(t))
        state.rng.bit_generator.state = meta["rng"]
        state.step = int(meta["step"])
        state.epoch = int(meta["epoch"])
        state.history = [(int(row[0]), [float(x) for x in row[1:]]) for row in meta["history"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not hold a training state ({exc})") from exc
    return state


def _format_row(step: int, row) -> list[str]:
    return [str(step)] + [repr(float(x)) for x in row]


def write_loss_csv(history, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for step, row in history:
        w.writerow(_format_row(step, row))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


# -- training loop -------------------------------------------------------------------
def train(idx: DatasetIndex, cmap: ContextMap, cfg: TrainConfig, out_dir=None,
          resume: bool = False, state: TrainState | None = None) -> TrainState:
    """Run ``cfg.epochs`` epochs over shuffled positives, one context per positive per epoch.

    With ``out_dir`` the state is checkpointed after every epoch to
    ``out_dir/checkpoint.bin`` and the loss log is
    written to ``out_dir/losses.csv``. ``resume`` continues from the
    checkpoint found there.
    """
    tiles = positive_tiles(idx)
    if not tiles:
        raise TrainConfigError("the training index has no positive chips")
    missing = [t for t in tiles if t not in cmap]
    if missing:
        raise TrainConfigError(f"positive tiles without contexts in the map: {missing[:5]}")
    out = Path(out_dir) if out_dir is not None else None
    if state is None:
        ckpt = out / "checkpoint.bin" if out is not None else None
        if resume and ckpt is not None and ckpt.exists():
            state = load_state(ckpt)
            if state.cfg.to_dict() != cfg.to_dict():
                state.cfg = cfg
                log.warning("resuming with a config that differs from the checkpoint")
        else:
            state = init_state(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    cache = _ChipCache(idx, cfg.label_cfg)
    bs = cfg.batch_size
    while state.epoch < cfg.epochs:
        rng = state.rng
        order = [tiles[i] for i in rng.permutation(len(tiles))]
        contexts = [sample_context(cmap, t, rng) for t in order]
        for s in range(0, len(order), bs):
            batch = _make_batch(cache, order[s:s + bs], contexts[s:s + bs], cfg, rng)
            state, report = train_step(state, batch)
            state.history.append((state.step, report.as_row()))
        state.epoch += 1
        log.info("epoch %d step %d loss_loc %.4f", state.epoch, state.step, state.history[-1][1][3])
        if out is not None:
            save_state(state, out / "checkpoint.bin")
            write_loss_csv(state.history, out / "losses.csv")
    return state


# -- inference -----------------------------------------------------------------------
def predict_batch(state: TrainState, images, labels) -> np.ndarray:
    """Soft masks (N,H,W) for stacked images (N,H,W,3) and pseudo labels (N,H,W)."""
    x = np.concatenate([np.asarray(images, dtype=np.float32),
                        np.asarray(labels, dtype=np.float32)[..., None]], axis=-1)
    return state.seg(x).data[..., 0]


def predict(state: TrainState, i_r, points) -> np.ndarray:
    """Raw segmenter output for one chip; no thresholding."""
    i_r = np.asarray(i_r)
    if i_r.ndim != 3 or i_r.shape[-1] != 3:
        raise ShapeError(f"expected an (H, W, 3) image, got {i_r.shape}")
    h, w = i_r.shape[:2]
    y = make_pseudo_label(points, state.cfg.label_cfg, h, w)
    return predict_batch(state, i_r[None], y[None])[0]


def predict_index(state: TrainState, idx: DatasetIndex, batch_size: int = 16) -> dict:
    """Soft masks for every chip of ``idx``, keyed by tile id."""
    cache = _ChipCache(idx, state.cfg.label_cfg)
    tiles = [ch.tile_id for ch in idx.chips]
    out = {}
    for s in range(0, len(tiles), batch_size):
        part = tiles[s:s + batch_size]
        imgs = np.stack([cache.image(t) for t in part])
        labs = np.stack([cache.label(t)[..., 0] for t in part])
        for t, m in zip(part, predict_batch(state, imgs, labs)):
            out[t] = m
    return out


def config_json(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n"
