"""Positive/negative tile classification and the context dictionary.

For each positive tile (one holding point labels) the nearest negative tiles
are found by scanning Chebyshev rings outward from it: ring ``r`` is every
tile at distance exactly ``r``, visited in row-major order.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import DatasetIndex

DEFAULT_K = 8


class ContextError(ValueError):
    """No context can be found, or a lookup hits an unknown tile."""


@dataclass
class TileGrid:
    rows: int
    cols: int
    positives: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        self.positives = frozenset((int(r), int(c)) for r, c in self.positives)
        for r, c in self.positives:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise ValueError(f"positive tile {(r, c)} outside {self.rows}x{self.cols} grid")

    @property
    def n_negative(self) -> int:
        return self.rows * self.cols - len(self.positives)

    def is_positive(self, tile) -> bool:
        return tuple(tile) in self.positives


def classify_tiles(idx: DatasetIndex) -> TileGrid:
    """A tile is positive iff its chip carries at least one point label."""
    return TileGrid(idx.grid_rows, idx.grid_cols,
                    frozenset(ch.tile_id for ch in idx.chips if ch.points))


def _ring(origin, r: int, rows: int, cols: int):
    """Tiles at Chebyshev distance exactly ``r``, row-major, clipped to the grid."""
    r0, c0 = origin
    for row in range(max(0, r0 - r), min(rows, r0 + r + 1)):
        if abs(row - r0) == r:
            for col in range(max(0, c0 - r), min(cols, c0 + r + 1)):
                yield row, col
        else:
            for col in (c0 - r, c0 + r):
                if 0 <= col < cols:
                    yield row, col


def find_contexts(grid: TileGrid, origin, k: int = DEFAULT_K) -> list:
    """Up to ``k`` negative tiles nearest to ``origin``, nearest rings first."""
    origin = (int(origin[0]), int(origin[1]))
    if not grid.is_positive(origin):
        raise ContextError(f"origin {origin} is not a positive tile")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    r0, c0 = origin
    max_r = max(r0, grid.rows - 1 - r0, c0, grid.cols - 1 - c0)
    found = []
    for r in range(1, max_r + 1):
        found.extend(t for t in _ring(origin, r, grid.rows, grid.cols) if t not in grid.positives)
        if len(found) >= k:
            break
    return found[:k]


@dataclass
class ContextMap:
    k: int
    entries: dict = field(default_factory=dict)

    def __getitem__(self, tile):
        key = (int(tile[0]), int(tile[1]))
        if key not in self.entries:
            raise ContextError(f"tile {key} has no context entry")
        return self.entries[key]

    def __contains__(self, tile) -> bool:
        return (int(tile[0]), int(tile[1])) in self.entries

    def __len__(self):
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "entries": {f"{r}_{c}": [list(t) for t in v]
                        for (r, c), v in sorted(self.entries.items())},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ContextMap":
        try:
            k = int(doc["k"])
            entries = {}
            for key, vals in doc["entries"].items():
                r, c = (int(v) for v in key.split("_"))
                entries[(r, c)] = [(int(a), int(b)) for a, b in vals]
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ContextError(f"malformed context map: {exc}") from exc
        return cls(k, entries)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "ContextMap":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_context_map(grid: TileGrid, k: int = DEFAULT_K) -> ContextMap:
    if grid.positives and grid.n_negative == 0:
        raise ContextError("grid has positive tiles but no negative tile to use as context")
    return ContextMap(k, {t: find_contexts(grid, t, k) for t in sorted(grid.positives)})


def sample_context(cmap: ContextMap, tile, rng: np.random.Generator):
    """Draw one context of ``tile`` uniformly at random."""
    options = cmap[tile]
    return options[int(rng.integers(len(options)))]
