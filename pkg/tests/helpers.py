"""Shared oracles for the test suite."""
from __future__ import annotations

from collections import deque

import numpy as np

from weakseg.autodiff.tensor import Tensor


def rel_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    den = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def _smooth(f0, up, down, eps) -> bool:
    """False when the one-sided slopes disagree, i.e. the probe straddles a relu/max kink."""
    fwd = (up - f0) / eps
    bwd = (f0 - down) / eps
    return abs(fwd - bwd) <= 1e-3 * (abs(fwd) + abs(bwd)) + 1e-6


def fd_check_inputs(fn, arrays, rng, eps=1e-5, max_coords=40):
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps Tensors to a Tensor; the scalar probed is ``sum(out * R)``
    for a fixed random ``R`` so every output element contributes. Probes
    that straddle a kink of a piecewise-linear op are skipped (at most 10%).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*ts)
    weights = rng.standard_normal(out.shape)
    out.backward(weights)

    def probe(vals):
        return float(np.sum(fn(*[Tensor(v) for v in vals]).data * weights))

    f0 = probe(arrays)
    worst = 0.0
    skipped = total = 0
    for i, a in enumerate(arrays):
        n = a.size
        coords = rng.choice(n, size=min(n, max_coords), replace=False)
        kept, num = [], []
        for j in coords:
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i].flat[j] += eps
            minus[i].flat[j] -= eps
            up, down = probe(plus), probe(minus)
            total += 1
            if not _smooth(f0, up, down, eps):
                skipped += 1
                continue
            kept.append(j)
            num.append((up - down) / (2 * eps))
        worst = max(worst, rel_error(ts[i].grad.flat[kept], num))
    assert skipped <= 0.1 * total, f"{skipped}/{total} probes hit kinks"
    return worst


def fd_check_params(net, loss_fn, rng, eps=1e-5, per_param=3):
    """Relative error of parameter gradients of ``loss_fn(net)`` against central differences."""
    net.zero_grad()
    loss = loss_fn(net)
    loss.backward()
    f0 = loss.item()
    analytic, numeric = [], []
    skipped = total = 0
    for p in net.parameters():
        for j in rng.choice(p.data.size, size=min(per_param, p.data.size), replace=False):
            old = p.data.flat[j]
            p.data.flat[j] = old + eps
            up = loss_fn(net).item()
            p.data.flat[j] = old - eps
            down = loss_fn(net).item()
            p.data.flat[j] = old
            total += 1
            if not _smooth(f0, up, down, eps):
                skipped += 1
                continue
            analytic.append(p.grad.flat[j])
            numeric.append((up - down) / (2 * eps))
    assert skipped <= 0.1 * total, f"{skipped}/{total} probes hit kinks"
    return rel_error(analytic, numeric)


def away_from_zero(rng, shape, margin=1e-2):
    """Normal samples pushed off the relu kink."""
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def bfs_contexts(positives, rows, cols, origin, k):
    """Independent oracle: breadth-first search in Chebyshev rings.

    Tiles are visited level by level through 8-neighbour steps; each level
    is one Chebyshev ring, sorted row-major before negatives are collected.
    """
    seen = {origin}
    frontier = [origin]
    found = []
    while frontier and len(found) < k:
        nxt = set()
        for r, c in frontier:
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    t = (r + dr, c + dc)
                    if 0 <= t[0] < rows and 0 <= t[1] < cols and t not in seen:
                        seen.add(t)
                        nxt.add(t)
        level = sorted(nxt)
        found.extend(t for t in level if t not in positives)
        frontier = level
    return found[:k]


def flood_components(mask) -> int:
    """4-connected component count by explicit flood fill."""
    m = np.asarray(mask).astype(bool)
    h, w = m.shape
    seen = np.zeros_like(m)
    n = 0
    for r in range(h):
        for c in range(w):
            if m[r, c] and not seen[r, c]:
                n += 1
                q = deque([(r, c)])
                seen[r, c] = True
                while q:
                    y, x = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and m[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
    return n
