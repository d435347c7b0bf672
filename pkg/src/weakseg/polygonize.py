"""Binary mask -> polygons on the pixel-corner lattice, plus GeoJSON export.

Pixel ``(r, c)`` is the unit square ``[c, c+1] x [r, r+1]`` in ``(x, y)``.
Exterior rings have positive shoelace area (CCW with x right, y up), holes
negative. Foreground is 4-connected and background 8-connected: at a
diagonal "saddle" corner the tracer turns towards the pixel it is hugging,
so diagonal foreground pixels never merge.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

Ring = list  # closed list of (x, y); first == last

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class Polygon:
    exterior: Ring
    holes: list = field(default_factory=list)
    tile_id: tuple | None = None

    @property
    def area(self) -> float:
        return ring_area(self.exterior) + sum(ring_area(h) for h in self.holes)

    def rings(self):
        return [self.exterior, *self.holes]


def ring_area(ring) -> float:
    """Signed shoelace area; positive for counter-clockwise rings."""
    a = np.asarray(ring, dtype=np.float64)
    x, y = a[:-1, 0], a[:-1, 1]
    x2, y2 = a[1:, 0], a[1:, 1]
    return float(0.5 * np.sum(x * y2 - x2 * y))


# direction -> (dx, dy); left turn of (dx, dy) is (-dy, dx)
def _left(d):
    return (-d[1], d[0])


def _right(d):
    return (d[1], -d[0])


def _edge_pixel(x, y, d):
    """Foreground pixel (row, col) lying to the left of the edge leaving (x, y) along d."""
    if d == (1, 0):
        return y, x
    if d == (0, 1):
        return y, x - 1
    if d == (-1, 0):
        return y - 1, x - 1
    return y - 1, x


def _boundary_edges(m: np.ndarray) -> dict:
    """Map start vertex -> list of outgoing unit directions."""
    h, w = m.shape
    p = np.pad(m, 1)
    fg = p[1:-1, 1:-1]
    out: dict = {}
    rows, cols = np.nonzero(fg & ~p[:-2, 1:-1])   # neighbour at row-1 empty: edge y=r, +x
    for r, c in zip(rows.tolist(), cols.tolist()):
        out.setdefault((c, r), []).append((1, 0))
    rows, cols = np.nonzero(fg & ~p[1:-1, 2:])    # col+1 empty: edge x=c+1, +y
    for r, c in zip(rows.tolist(), cols.tolist()):
        out.setdefault((c + 1, r), []).append((0, 1))
    rows, cols = np.nonzero(fg & ~p[2:, 1:-1])    # row+1 empty: edge y=r+1, -x
    for r, c in zip(rows.tolist(), cols.tolist()):
        out.setdefault((c + 1, r + 1), []).append((-1, 0))
    rows, cols = np.nonzero(fg & ~p[1:-1, :-2])   # col-1 empty: edge x=c, -y
    for r, c in zip(rows.tolist(), cols.tolist()):
        out.setdefault((c, r + 1), []).append((0, -1))
    return out


def _trace_loops(edges: dict):
    """Follow directed edges into closed loops, preferring left, straight, right.

    The first edge of a loop stays selectable at its start vertex so the turn
    rule alone decides whether the loop closes there or passes through.
    """
    loops = []
    for start in sorted(edges):
        while edges[start]:
            d0 = edges[start].pop(0)
            verts, dirs = [start], [d0]
            d = d0
            v = (start[0] + d[0], start[1] + d[1])
            while True:
                options = list(edges.get(v, ()))
                if v == start:
                    options.append(d0)
                nxt = next((t for t in (_left(d), d, _right(d)) if t in options), None)
                if nxt is None:
                    raise RuntimeError(f"open boundary at vertex {v}")  # pragma: no cover
                if v == start and nxt == d0 and d0 not in edges.get(v, ()):
                    break
                edges[v].remove(nxt)
                verts.append(v)
                dirs.append(nxt)
                d = nxt
                v = (v[0] + d[0], v[1] + d[1])
            loops.append((verts, dirs))
    return loops


def _compress(verts, dirs) -> Ring:
    """Drop vertices where the direction does not change; close the ring."""
    n = len(verts)
    keep = [verts[i] for i in range(n) if dirs[i] != dirs[i - 1]]
    return [(float(x), float(y)) for x, y in keep] + [(float(keep[0][0]), float(keep[0][1]))]


def mask_to_polygons(m) -> list[Polygon]:
    """One polygon per 4-connected foreground component, holes attached."""
    m = np.asarray(m).astype(bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {m.shape}")
    if not m.any():
        return []
    labels, n = ndimage.label(m, structure=_FOUR)
    loops = _trace_loops(_boundary_edges(m))
    exteriors: dict = {}
    holes: dict = {}
    for verts, dirs in loops:
        ring = _compress(verts, dirs)
        r, c = _edge_pixel(verts[0][0], verts[0][1], dirs[0])
        comp = int(labels[r, c])
        if ring_area(ring) > 0:
            if comp in exteriors:
                raise RuntimeError(f"component {comp} produced two exterior rings")  # pragma: no cover
            exteriors[comp] = ring
        else:
            holes.setdefault(comp, []).append(ring)
    return [Polygon(exteriors[k], sorted(holes.get(k, []))) for k in range(1, n + 1)]


# -- simplification -----------------------------------------------------------
def _seg_dist(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0:
        return float(np.hypot(px - ax, py - ay))
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / L2))
    return float(np.hypot(px - (ax + t * dx), py - (ay + t * dy)))


def _dp(pts, tol):
    """Douglas-Peucker on an open chain; endpoints always kept."""
    keep = [False] * len(pts)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        best, idx = -1.0, -1
        for k in range(i + 1, j):
            d = _seg_dist(pts[k], pts[i], pts[j])
            if d > best:
                best, idx = d, k
        if idx >= 0 and best > tol:
            keep[idx] = True
            stack.append((i, idx))
            stack.append((idx, j))
    return keep


def simplify_ring(ring, tol: float):
    pts = list(ring[:-1])
    n = len(pts)
    if tol == 0 or n < 4:
        return list(ring)
    cx = sum(p[0] for p in pts) / n
    cy = sum(p[1] for p in pts) / n
    # anchors: farthest vertex from the centroid, then farthest from it;
    # both are true corners, never collinear midpoints
    a = max(range(n), key=lambda i: (np.hypot(pts[i][0] - cx, pts[i][1] - cy), -i))
    b = max(range(n), key=lambda i: (np.hypot(pts[i][0] - pts[a][0], pts[i][1] - pts[a][1]), -i))
    order = [(a + i) % n for i in range(n)]
    split = order.index(b)
    chain1 = order[:split + 1]
    chain2 = order[split:] + [a]
    kept = set()
    for chain in (chain1, chain2):
        flags = _dp([pts[i] for i in chain], tol)
        kept.update(i for i, f in zip(chain, flags) if f)
    out = [pts[i] for i in sorted(kept)]
    return out + [out[0]]


def simplify(p: Polygon, tol: float) -> Polygon | None:
    """Douglas-Peucker per ring; rings left with < 3 distinct vertices are dropped."""
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")
    if tol == 0:
        return Polygon(list(p.exterior), [list(h) for h in p.holes], p.tile_id)
    ext = simplify_ring(p.exterior, tol)
    if len(set(ext)) < 3:
        log.warning("polygon collapsed below 3 vertices at tolerance %s; dropped", tol)
        return None
    holes = []
    for h in p.holes:
        s = simplify_ring(h, tol)
        if len(set(s)) < 3:
            log.warning("hole collapsed below 3 vertices at tolerance %s; dropped", tol)
            continue
        holes.append(s)
    return Polygon(ext, holes, p.tile_id)


# -- rasterization (inverse map, used for checks) -------------------------------
def rasterize(polys, h: int, w: int) -> np.ndarray:
    """Even-odd fill of all rings, sampled at pixel centres."""
    out = np.zeros((h, w), dtype=bool)
    ys = np.arange(h) + 0.5
    xs = np.arange(w) + 0.5
    X, Y = np.meshgrid(xs, ys)
    for poly in polys:
        inside = np.zeros((h, w), dtype=bool)
        for ring in poly.rings():
            a = np.asarray(ring, dtype=np.float64)
            for (x1, y1), (x2, y2) in zip(a[:-1], a[1:]):
                if y1 == y2:
                    continue
                crosses = (Y >= min(y1, y2)) & (Y < max(y1, y2))
                xint = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
                inside ^= crosses & (X < xint)
        out |= inside
    return out


# -- GeoJSON ----------------------------------------------------------------------
def _coord(v: float):
    return float(v)


def polygons_to_geojson(polys) -> dict:
    feats = []
    for p in polys:
        rings = [[[_coord(x), _coord(y)] for x, y in ring] for ring in p.rings()]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": rings},
            "properties": {"tile_id": None if p.tile_id is None else list(p.tile_id)},
        })
    return {"type": "FeatureCollection", "features": feats}


def to_geojson(polys, path):
    """Write a FeatureCollection (compact, sorted keys, trailing newline)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(polygons_to_geojson(polys), sort_keys=True, separators=(",", ":")) + "\n")


def read_geojson(path) -> list[Polygon]:
    doc = json.loads(Path(path).read_text())
    out = []
    for f in doc["features"]:
        rings = [[tuple(pt) for pt in ring] for ring in f["geometry"]["coordinates"]]
        tid = f.get("properties", {}).get("tile_id")
        out.append(Polygon(rings[0], rings[1:], None if tid is None else tuple(tid)))
    return out
