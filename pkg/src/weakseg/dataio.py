"""On-disk dataset layout: 8-bit PNG chips and masks plus one ``index.json``.

Rasters are float arrays of shape (H, W, C) with values in [0, 1]; masks are
(H, W). Points are chip-local pixel coordinates ``(x, y)``: ``x`` grows along
columns, ``y`` along rows, pixel ``(r, c)`` covers ``[c, c+1) x [r, r+1)``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class DatasetFormatError(ValueError):
    """A file does not follow the dataset layout."""


TileId = tuple[int, int]


@dataclass
class ChipRecord:
    tile_id: TileId
    image_path: str
    points: list[tuple[float, float]] = field(default_factory=list)
    gt_mask_path: str | None = None

    def __post_init__(self):
        self.tile_id = (int(self.tile_id[0]), int(self.tile_id[1]))
        self.points = [(float(x), float(y)) for x, y in self.points]


@dataclass
class DatasetIndex:
    tile_size: int
    grid_rows: int
    grid_cols: int
    chips: list[ChipRecord] = field(default_factory=list)
    # directory that relative chip paths resolve against; not serialized
    root: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.chips.sort(key=lambda ch: ch.tile_id)
        validate_index(self)

    def chip(self, tile_id) -> ChipRecord:
        tid = tuple(tile_id)
        for ch in self.chips:
            if ch.tile_id == tid:
                return ch
        raise KeyError(f"no chip with tile_id {tid}")

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel


def validate_index(idx: DatasetIndex):
    if not isinstance(idx.tile_size, int) or idx.tile_size <= 0:
        raise DatasetFormatError(f"tile_size must be a positive integer, got {idx.tile_size!r}")
    for name in ("grid_rows", "grid_cols"):
        v = getattr(idx, name)
        if not isinstance(v, int) or v < 1:
            raise DatasetFormatError(f"{name} must be an integer >= 1, got {v!r}")
    seen = set()
    for ch in idx.chips:
        r, c = ch.tile_id
        if not (0 <= r < idx.grid_rows and 0 <= c < idx.grid_cols):
            raise DatasetFormatError(f"chips[].tile_id {[r, c]} outside the {idx.grid_rows}x{idx.grid_cols} grid")
        if ch.tile_id in seen:
            raise DatasetFormatError(f"chips[].tile_id {[r, c]} is duplicated")
        seen.add(ch.tile_id)
        for x, y in ch.points:
            if not (0 <= x < idx.tile_size and 0 <= y < idx.tile_size):
                raise DatasetFormatError(
                    f"chips[{r},{c}].points: ({x}, {y}) outside [0, {idx.tile_size})")


# -- rasters ----------------------------------------------------------------
def load_chip(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as a float raster, v -> v/255."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"chip not found: {path}")
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise DatasetFormatError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit L or RGB)")
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise DatasetFormatError(f"{path}: expected 8-bit samples, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def _to_bytes(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 3 and r.shape[2] == 1:
        r = r[:, :, 0]
    if r.ndim not in (2, 3) or (r.ndim == 3 and r.shape[2] != 3):
        raise DatasetFormatError(f"raster must be (H,W), (H,W,1) or (H,W,3), got {r.shape}")
    if np.any(~np.isfinite(r)) or r.min(initial=0.0) < 0 or r.max(initial=0.0) > 1:
        raise DatasetFormatError("raster values must lie in [0, 1]")
    # round half away from zero; np.round would send 0.5*255 to 127 (banker's)
    return np.floor(r * 255.0 + 0.5).astype(np.uint8)


def save_chip(r: np.ndarray, path):
    """Write a raster (H,W,3) or mask (H,W) as 8-bit PNG with v -> round(v*255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_bytes(r)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a mask PNG as a {0,1} uint8 array (H, W); any nonzero byte is foreground."""
    return (load_chip(path)[:, :, 0] > 0).astype(np.uint8)


def save_mask(m: np.ndarray, path):
    save_chip(np.asarray(m, dtype=np.float64), path)


# -- index ------------------------------------------------------------------
def _require(obj, key, kind, where):
    if key not in obj:
        raise DatasetFormatError(f"{where}: missing field '{key}'")
    v = obj[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise DatasetFormatError(f"{where}.{key}: expected integer, got {v!r}")
    if kind is list and not isinstance(v, list):
        raise DatasetFormatError(f"{where}.{key}: expected list, got {type(v).__name__}")
    return v


def index_from_dict(doc: dict, root=None) -> DatasetIndex:
    if not isinstance(doc, dict):
        raise DatasetFormatError("index: top level must be an object")
    tile_size = _require(doc, "tile_size", int, "index")
    rows = _require(doc, "grid_rows", int, "index")
    cols = _require(doc, "grid_cols", int, "index")
    chips = []
    for i, c in enumerate(_require(doc, "chips", list, "index")):
        where = f"chips[{i}]"
        if not isinstance(c, dict):
            raise DatasetFormatError(f"{where}: expected object")
        tid = _require(c, "tile_id", list, where)
        if len(tid) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in tid):
            raise DatasetFormatError(f"{where}.tile_id: expected [row, col] integers, got {tid!r}")
        image = _require(c, "image", str, where)
        if not isinstance(image, str):
            raise DatasetFormatError(f"{where}.image: expected string path")
        pts = []
        for j, pt in enumerate(_require(c, "points", list, where)):
            if (not isinstance(pt, list) or len(pt) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pt)):
                raise DatasetFormatError(f"{where}.points[{j}]: expected [x, y] numbers, got {pt!r}")
            pts.append((float(pt[0]), float(pt[1])))
        gt = c.get("gt_mask")
        if gt is not None and not isinstance(gt, str):
            raise DatasetFormatError(f"{where}.gt_mask: expected string or null")
        chips.append(ChipRecord((tid[0], tid[1]), image, pts, gt))
    return DatasetIndex(tile_size, rows, cols, chips, root=None if root is None else Path(root))


def index_to_dict(idx: DatasetIndex) -> dict:
    return {
        "tile_size": idx.tile_size,
        "grid_rows": idx.grid_rows,
        "grid_cols": idx.grid_cols,
        "chips": [
            {
                "tile_id": list(ch.tile_id),
                "image": ch.image_path,
                "points": [[x, y] for x, y in ch.points],
                "gt_mask": ch.gt_mask_path,
            }
            for ch in sorted(idx.chips, key=lambda ch: ch.tile_id)
        ],
    }


def load_index(path) -> DatasetIndex:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON ({exc})") from exc
    return index_from_dict(doc, root=path.parent)


def save_index(idx: DatasetIndex, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(index_to_dict(idx), indent=1) + "\n")
    os.replace(tmp, path)
