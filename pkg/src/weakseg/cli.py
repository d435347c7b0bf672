"""Command-line entry point: synth, preprocess, train, predict, eval, polygonize, ablate.

Every command reads one optional JSON run config (``--config``) whose
sections mirror the library config objects; flags override single keys.
Exit codes: 0 success, 1 internal failure, 2 user or config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .autodiff.checkpoint import CheckpointError
from .autodiff.kernels import ShapeError
from .autodiff.optim import TrainingError
from .dataio import DatasetFormatError, load_index
from .grid_context import ContextError, ContextMap, build_context_map, classify_tiles
from .losses import LossError
from .metrics import EvaluationError, eval_dataset
from .polygonize import mask_to_polygons, simplify, to_geojson
from .pseudolabel import LabelConfig, LabelConfigError
from .synthgen import SceneConfig, dataset_stats, generate_dataset
from .trainer import TrainConfig, TrainConfigError, config_json, load_state, predict_index, train

log = logging.getLogger("weakseg")

ABLATION_AXES = {
    "d2": [("on", {"use_d2": True}), ("off", {"use_d2": False})],
    "csm": [(str(v), {"csm": float(v)}) for v in (6000, 7000, 8000, 9000, 10000)],
    "context": [(m, {"context_mode": m}) for m in ("original", "blank", "red", "noise")],
    "supervision": [("p2p", {"objective": "p2p"}), ("supervised", {"objective": "supervised"})],
}
REPORT_COLUMNS = ("axis", "variant", "seed", "dice", "jaccard", "precision", "recall")
USER_ERRORS = (
    ValueError, KeyError, FileNotFoundError, NotADirectoryError,
    DatasetFormatError, ContextError, LabelConfigError, TrainConfigError,
    CheckpointError, EvaluationError, ShapeError, LossError, TrainingError,
)


class ConfigError(ValueError):
    pass


# -- run config ----------------------------------------------------------------------
def _train_defaults() -> dict:
    d = TrainConfig().to_dict()
    d.pop("label_cfg")
    return d


def default_config() -> dict:
    label = LabelConfig().to_dict()
    return {
        "scene": asdict(SceneConfig()),
        "label": label,
        "train": _train_defaults(),
        "eval": {"aggregation": "micro", "threshold": 0.5},
        "polygonize": {"threshold": 0.5, "tolerance": 0.0},
        "ablate": {"seeds": [0, 1, 2]},
    }


def merge_config(base: dict, override: dict, where: str = "config") -> dict:
    """Recursively overlay ``override`` on ``base``; unknown keys are errors."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}.{k} (allowed: {', '.join(sorted(base))})")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where}.{k} must be an object")
            out[k] = merge_config(base[k], v, f"{where}.{k}")
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return merge_config(cfg, doc)


def apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["scene"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
    if getattr(args, "csm", None) is not None:
        cfg["label"]["csm"] = args.csm
    if getattr(args, "rho", None) is not None:
        cfg["label"]["rho"] = args.rho
    if getattr(args, "context_mode", None) is not None:
        cfg["train"]["context_mode"] = args.context_mode
    if getattr(args, "no_d2", False):
        cfg["train"]["use_d2"] = False
    if getattr(args, "threshold", None) is not None:
        cfg["eval"]["threshold"] = args.threshold
        cfg["polygonize"]["threshold"] = args.threshold
    if getattr(args, "tolerance", None) is not None:
        cfg["polygonize"]["tolerance"] = args.tolerance
    if getattr(args, "k", None) is not None:
        cfg["train"]["k_contexts"] = args.k
    if getattr(args, "epochs", None) is not None:
        cfg["train"]["epochs"] = args.epochs
    return cfg


def scene_config(cfg: dict) -> SceneConfig:
    return SceneConfig(**cfg["scene"])


def train_config(cfg: dict, **overrides) -> TrainConfig:
    label = dict(cfg["label"])
    train_kw = dict(cfg["train"])
    for k, v in overrides.items():
        (label if k in label else train_kw)[k] = v
    return TrainConfig(label_cfg=LabelConfig(**label), **train_kw)


# -- helpers -------------------------------------------------------------------------
def split_dir(path, name: str) -> Path:
    """``path`` itself if it holds ``index.json``, else ``path/name``."""
    p = Path(path)
    if (p / "index.json").exists():
        return p
    if (p / name / "index.json").exists():
        return p / name
    raise FileNotFoundError(f"no index.json in {p} or {p / name}")


def _context_map(split: Path, k: int) -> ContextMap:
    path = split / "context_map.json"
    if path.exists():
        cmap = ContextMap.load(path)
        if cmap.k == k:
            return cmap
    return build_context_map(classify_tiles(load_index(split / "index.json")), k)


def _tile_name(tile) -> str:
    return f"{tile[0]}_{tile[1]}.png"


def _parse_tile(name: str):
    r, c = Path(name).stem.split("_")
    return int(r), int(c)


# -- commands -----------------------------------------------------------------------
def cmd_synth(cfg: dict, args) -> int:
    ds = generate_dataset(scene_config(cfg), args.out)
    for name, idx in (("train", ds.train), ("test", ds.test)):
        print(name, json.dumps(dataset_stats(idx), sort_keys=True))
    return 0


def cmd_preprocess(cfg: dict, args) -> int:
    split = split_dir(args.data, "train")
    idx = load_index(split / "index.json")
    k = int(cfg["train"]["k_contexts"])
    cmap = build_context_map(classify_tiles(idx), k)
    out = Path(args.out) if args.out else split / "context_map.json"
    cmap.save(out)
    print(f"{len(cmap)} positive tiles mapped to contexts -> {out}")
    return 0


def cmd_train(cfg: dict, args) -> int:
    split = split_dir(args.data, "train")
    idx = load_index(split / "index.json")
    tcfg = train_config(cfg)
    cmap = _context_map(split, tcfg.k_contexts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_json(tcfg))
    state = train(idx, cmap, tcfg, out_dir=out, resume=args.resume)
    print(f"trained {state.step} steps -> {out / 'checkpoint.bin'}")
    return 0


def cmd_predict(cfg: dict, args) -> int:
    state = load_state(args.checkpoint)
    split = split_dir(args.data, "test")
    idx = load_index(split / "index.json")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = predict_index(state, idx)
    for tile, m in preds.items():
        Image.fromarray(np.floor(m * 255.0 + 0.5).astype(np.uint8), mode="L").save(out / _tile_name(tile))
    print(f"{len(preds)} soft masks -> {out}")
    return 0


def cmd_eval(cfg: dict, args) -> int:
    state = load_state(args.checkpoint)
    split = split_dir(args.data, "test")
    idx = load_index(split / "index.json")
    report = eval_dataset(state, idx, cfg["eval"]["aggregation"], cfg["eval"]["threshold"])
    out = Path(args.out)
    path = out if out.suffix == ".json" else out / "metrics.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    report.save(path)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_polygonize(cfg: dict, args) -> int:
    tau = float(cfg["polygonize"]["threshold"])
    tol = float(cfg["polygonize"]["tolerance"])
    if not 0 < tau < 1:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise NotADirectoryError(f"prediction directory not found: {pred_dir}")
    polys = []
    for png in sorted(pred_dir.glob("*.png"), key=lambda p: _parse_tile(p.name)):
        tile = _parse_tile(png.name)
        with Image.open(png) as im:
            soft = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        for p in mask_to_polygons(soft >= tau):
            p.tile_id = tile
            s = simplify(p, tol)
            if s is not None:
                polys.append(s)
    out = Path(args.out) if args.out else pred_dir / "polygons.geojson"
    to_geojson(polys, out)
    print(f"{len(polys)} polygons -> {out}")
    return 0


def run_ablation(cfg: dict, axis: str, train_split: Path, test_split: Path, seeds) -> list[dict]:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"axis must be one of {sorted(ABLATION_AXES)}, got {axis!r}")
    train_idx = load_index(train_split / "index.json")
    test_idx = load_index(test_split / "index.json")
    rows = []
    for variant, over in ABLATION_AXES[axis]:
        for seed in seeds:
            tcfg = train_config(cfg, seed=int(seed), **over)
            cmap = _context_map(train_split, tcfg.k_contexts)
            state = train(train_idx, cmap, tcfg)
            rep = eval_dataset(state, test_idx, cfg["eval"]["aggregation"], cfg["eval"]["threshold"])
            rows.append({"axis": axis, "variant": variant, "seed": int(seed), "dice": rep.dice,
                         "jaccard": rep.jaccard, "precision": rep.precision, "recall": rep.recall})
            log.info("ablate %s=%s seed %s dice %.4f", axis, variant, seed, rep.dice)
    return rows


def write_report(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_ablate(cfg: dict, args) -> int:
    seeds = [args.seed] if args.seed is not None else cfg["ablate"]["seeds"]
    rows = run_ablation(cfg, args.axis, split_dir(args.data, "train"), split_dir(args.data, "test"), seeds)
    out = Path(args.out)
    path = out if out.suffix == ".csv" else out / "ablation_report.csv"
    write_report(rows, path)
    print(f"{len(rows)} rows -> {path}")
    return 0


# -- parser ---------------------------------------------------------------------------
def _defaults_epilog() -> str:
    lines = ["run config keys and defaults (JSON sections; unknown keys are rejected):"]
    for section, body in default_config().items():
        for k, v in body.items():
            lines.append(f"  {section}.{k} = {json.dumps(v)}")
    lines.append("")
    lines.append("ablation axes: " + "; ".join(
        f"{a} = {{{', '.join(v for v, _ in variants)}}}" for a, variants in ABLATION_AXES.items()))
    lines.append("exit codes: 0 success, 1 internal failure, 2 user or config error")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; sections scene, label, train, eval, polygonize, ablate")
    common.add_argument("--seed", type=int, help="overrides scene.seed and train.seed (ablate: a single seed)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(
        prog="weakseg", description="Point-supervised segmentation with contextual discriminators.",
        epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_, func):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_,
                            epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=func)
        return sp

    def train_flags(sp):
        sp.add_argument("--csm", type=float, help="pseudo-label scale (label.csm)")
        sp.add_argument("--rho", type=float, help="localization loss cap (label.rho)")
        sp.add_argument("--context-mode", choices=("original", "blank", "red", "noise"),
                        help="context transform (train.context_mode)")
        sp.add_argument("--no-d2", action="store_true", help="disable the context discriminator")
        sp.add_argument("--k", type=int, help="contexts per positive tile (train.k_contexts)")
        sp.add_argument("--epochs", type=int, help="training epochs (train.epochs)")

    sp = add("synth", "generate a synthetic dataset (train/ and test/ splits)", cmd_synth)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("preprocess", "build context_map.json for a split", cmd_preprocess)
    sp.add_argument("--data", required=True, help="split directory or dataset root (uses train/)")
    sp.add_argument("--k", type=int, help="contexts per positive tile (train.k_contexts)")
    sp.add_argument("--out", help="output path (default: <split>/context_map.json)")

    sp = add("train", "train segmenter and discriminators; writes checkpoint.bin and losses.csv", cmd_train)
    sp.add_argument("--data", required=True, help="split directory or dataset root (uses train/)")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.bin")
    train_flags(sp)

    sp = add("predict", "write soft-mask PNGs for every chip of a split", cmd_predict)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="split directory or dataset root (uses test/)")
    sp.add_argument("--out", required=True, help="output directory for r_c.png soft masks")

    sp = add("eval", "evaluate a checkpoint on a split; writes metrics.json", cmd_eval)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="split directory or dataset root (uses test/)")
    sp.add_argument("--out", required=True, help="directory or .json path")
    sp.add_argument("--threshold", type=float, help="binarization threshold (eval.threshold)")

    sp = add("polygonize", "threshold soft masks and export polygons as GeoJSON", cmd_polygonize)
    sp.add_argument("--pred", required=True, help="directory of r_c.png soft masks")
    sp.add_argument("--out", help="GeoJSON path (default: <pred>/polygons.geojson)")
    sp.add_argument("--threshold", type=float, help="binarization threshold (polygonize.threshold)")
    sp.add_argument("--tolerance", type=float, help="Douglas-Peucker tolerance in px (polygonize.tolerance)")

    sp = add("ablate", "seeded sweep over one axis; writes ablation_report.csv", cmd_ablate)
    sp.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    sp.add_argument("--data", required=True, help="dataset root holding train/ and test/")
    sp.add_argument("--out", required=True, help="directory or .csv path")
    sp.add_argument("--threshold", type=float, help="binarization threshold (eval.threshold)")
    train_flags(sp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_flags(load_config(args.config), args)
        return args.func(cfg, args)
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"weakseg {args.command}: error: {msg}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001 - last-resort diagnostics
        traceback.print_exc()
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
