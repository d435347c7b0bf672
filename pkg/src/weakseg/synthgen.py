"""Deterministic synthetic scenes: textured ground with bright solid objects.

A scene is one large raster cut into a grid of square tiles. Backgrounds are
smoothed white noise on top of a slowly varying base colour, so neighbouring
tiles look alike and distant ones drift apart. A fraction of tiles receive
1-3 non-touching objects (ellipses or rounded rectangles) whose centres,
jittered, become the point labels.

Two scenes are written per dataset: ``train/`` (full grid, every tile) and
``test/`` (a separate smaller raster, object-bearing tiles only).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import ChipRecord, DatasetIndex, load_mask, save_chip, save_index, save_mask
from .grid_context import _ring

_FOUR = ndimage.generate_binary_structure(2, 1)
KINDS = ("ellipse", "rounded-rect", "mixed")


@dataclass
class SceneConfig:
    grid_rows: int = 16
    grid_cols: int = 16
    test_grid_rows: int = 8
    test_grid_cols: int = 8
    tile_size: int = 64
    object_density: float = 0.25
    min_objects: int = 1
    max_objects: int = 3
    object_kind: str = "mixed"
    min_radius: float = 4.5
    max_radius: float = 8.5
    bg_correlation: float = 3.0
    bg_contrast: float = 0.06
    color_separation: float = 0.3
    jitter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.object_density < 1:
            raise ValueError(f"object_density must be in [0, 1), got {self.object_density}")
        if self.tile_size <= 0 or self.tile_size % 8:
            raise ValueError(f"tile_size must be a positive multiple of 8, got {self.tile_size}")
        if self.object_kind not in KINDS:
            raise ValueError(f"object_kind must be one of {KINDS}, got {self.object_kind!r}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if not 0 < self.min_radius <= self.max_radius < self.tile_size / 4:
            raise ValueError("object radii must satisfy 0 < min <= max < tile_size/4")
        if self.color_separation <= 0 or self.color_separation > 0.5:
            raise ValueError("color_separation must lie in (0, 0.5]")


@dataclass
class SyntheticDataset:
    train: DatasetIndex
    test: DatasetIndex


# -- shapes ----------------------------------------------------------------------
def _signed_distance(kind, cx, cy, a, b, theta, corner, xs, ys):
    """Approximate signed distance (px, negative inside) on the pixel-centre grid."""
    ct, st = np.cos(theta), np.sin(theta)
    u = (xs - cx) * ct + (ys - cy) * st
    v = -(xs - cx) * st + (ys - cy) * ct
    if kind == "ellipse":
        f = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        return (f - 1.0) * min(a, b)
    qx = np.abs(u) - (a - corner)
    qy = np.abs(v) - (b - corner)
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    return outside + np.minimum(np.maximum(qx, qy), 0) - corner


def _background(rng, h, w, cfg: SceneConfig, tile: int) -> np.ndarray:
    base = np.array([0.36, 0.34, 0.26]) + rng.uniform(-0.04, 0.04, size=3)
    img = np.empty((h, w, 3))
    for ch in range(3):
        fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), cfg.bg_correlation, mode="wrap")
        fine /= fine.std() + 1e-12
        # tile-scale drift: smooth noise on the tile grid, upsampled
        grid = ndimage.gaussian_filter(rng.standard_normal((h // tile + 1, w // tile + 1)), 1.0)
        coarse = ndimage.zoom(grid / (grid.std() + 1e-12), tile, order=1)[:h, :w]
        img[:, :, ch] = base[ch] + cfg.bg_contrast * fine + 0.04 * coarse
    # shared luminance texture so channels co-vary like real ground cover
    lum = ndimage.gaussian_filter(rng.standard_normal((h, w)), cfg.bg_correlation / 2, mode="wrap")
    img += (cfg.bg_contrast * 0.5) * (lum / (lum.std() + 1e-12))[:, :, None]
    return np.clip(img, 0.0, 1.0)


def _choose_positives(rng, rows, cols, density) -> set:
    n = int(round(density * rows * cols))
    if n == 0:
        return set()
    flat = rng.choice(rows * cols, size=n, replace=False)
    pos = {(int(i) // cols, int(i) % cols) for i in flat}
    # every positive needs a negative within ring 3; demote until that holds
    changed = True
    while changed:
        changed = False
        for t in sorted(pos):
            near = [q for r in (1, 2, 3) for q in _ring(t, r, rows, cols)]
            if not any(q not in pos for q in near):
                pos.discard(t)
                changed = True
    return pos


def _place_objects(rng, cfg: SceneConfig, n_obj: int):
    t = cfg.tile_size
    ys, xs = np.mgrid[0:t, 0:t] + 0.5
    occupied = np.zeros((t, t), dtype=bool)
    objs = []
    for _ in range(n_obj):
        for _attempt in range(60):
            kind = cfg.object_kind
            if kind == "mixed":
                kind = "ellipse" if rng.random() < 0.5 else "rounded-rect"
            a = rng.uniform(cfg.min_radius, cfg.max_radius)
            b = rng.uniform(max(cfg.min_radius, 0.6 * a), a)
            theta = rng.uniform(0, np.pi)
            corner = 0.35 * min(a, b)
            margin = a + 2
            cx = rng.uniform(margin, t - margin)
            cy = rng.uniform(margin, t - margin)
            sd = _signed_distance(kind, cx, cy, a, b, theta, corner, xs, ys)
            inside = sd <= 0
            halo = sd <= 3.0
            if not inside.any() or (halo & occupied).any():
                continue
            occupied |= halo
            objs.append({"kind": kind, "cx": cx, "cy": cy, "sd": sd, "inside": inside})
            break
    return objs


def _object_color(rng, local_mean, sep):
    color = np.empty(3)
    for ch in range(3):
        delta = sep + rng.uniform(0.0, 0.1)
        up = local_mean[ch] + delta
        color[ch] = up if up <= 1.0 else local_mean[ch] - delta
    return color


def render_scene(cfg: SceneConfig, rows: int, cols: int, rng):
    """Return (image, gt_mask, per-tile point lists) for one raster."""
    t = cfg.tile_size
    h, w = rows * t, cols * t
    img = _background(rng, h, w, cfg, t)
    gt = np.zeros((h, w), dtype=np.uint8)
    positives = _choose_positives(rng, rows, cols, cfg.object_density)
    points: dict = {}
    n_objects: dict = {}
    for tile in sorted(positives):
        r0, c0 = tile[0] * t, tile[1] * t
        n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
        objs = _place_objects(rng, cfg, n_obj)
        pts = []
        patch = img[r0:r0 + t, c0:c0 + t]
        for o in objs:
            local_mean = patch[o["inside"]].mean(axis=0)
            color = _object_color(rng, local_mean, cfg.color_separation)
            # opaque inside, one-pixel soft rim outside; gt stays crisp
            alpha = np.clip(1.0 - o["sd"], 0.0, 1.0)
            patch[...] = patch * (1 - alpha[:, :, None]) + color * alpha[:, :, None]
            gt[r0:r0 + t, c0:c0 + t][o["inside"]] = 1
            jx, jy = rng.normal(0.0, cfg.jitter, size=2) if cfg.jitter > 0 else (0.0, 0.0)
            x = float(np.clip(o["cx"] + jx, 0.0, np.nextafter(t, 0)))
            y = float(np.clip(o["cy"] + jy, 0.0, np.nextafter(t, 0)))
            pts.append((round(x, 3), round(y, 3)))
        if pts:
            points[tile] = pts
            n_objects[tile] = len(objs)
    return img, gt, points, n_objects


def _write_split(img, gt, points, cfg, rows, cols, out: Path, positives_only: bool) -> DatasetIndex:
    t = cfg.tile_size
    chips = []
    for r in range(rows):
        for c in range(cols):
            pts = points.get((r, c), [])
            if positives_only and not pts:
                continue
            name = f"{r}_{c}.png"
            save_chip(img[r * t:(r + 1) * t, c * t:(c + 1) * t], out / "chips" / name)
            save_mask(gt[r * t:(r + 1) * t, c * t:(c + 1) * t], out / "masks" / name)
            chips.append(ChipRecord((r, c), f"chips/{name}", pts, f"masks/{name}"))
    idx = DatasetIndex(t, rows, cols, chips, root=out)
    save_index(idx, out / "index.json")
    return idx


def generate_dataset(cfg: SceneConfig, out_dir) -> SyntheticDataset:
    """Write ``train/`` and ``test/`` splits under ``out_dir``; deterministic per seed."""
    out = Path(out_dir)
    train_rng, test_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    img, gt, pts, _ = render_scene(cfg, cfg.grid_rows, cfg.grid_cols, train_rng)
    train = _write_split(img, gt, pts, cfg, cfg.grid_rows, cfg.grid_cols, out / "train", False)
    img, gt, pts, _ = render_scene(cfg, cfg.test_grid_rows, cfg.test_grid_cols, test_rng)
    test = _write_split(img, gt, pts, cfg, cfg.test_grid_rows, cfg.test_grid_cols, out / "test", True)
    (out / "scene.json").write_text(json.dumps(asdict(cfg), indent=1) + "\n")
    return SyntheticDataset(train, test)


def dataset_stats(idx: DatasetIndex) -> dict:
    """Tile counts plus object count and mean area from the gt masks."""
    positives = sum(1 for ch in idx.chips if ch.points)
    objects = 0
    area = 0
    for ch in idx.chips:
        if ch.gt_mask_path is None:
            objects += len(ch.points)
            continue
        m = load_mask(idx.resolve(ch.gt_mask_path))
        _, n = ndimage.label(m, structure=_FOUR)
        objects += n
        area += int(m.sum())
    return {
        "positives": positives,
        "negatives": len(idx.chips) - positives,
        "objects": objects,
        "mean_object_area": area / objects if objects else 0.0,
    }

