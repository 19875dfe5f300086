"""Pure-Python/NumPy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation (same summation
order, same tie-breaking), so both backends produce the same partitions and
splits. Covariances agree to within an ulp.
"""

from __future__ import annotations

import math

import numpy as np


def masked_cov(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Population covariance of ``a`` and ``b`` over ``mask``, exactly-rounded sums."""
    sel_a = a[mask]
    sel_b = b[mask]
    n = sel_a.shape[0]
    ma = math.fsum(sel_a) / n
    mb = math.fsum(sel_b) / n
    return math.fsum((sel_a - ma) * (sel_b - mb)) / n


def cell_covariances(cols: np.ndarray, y: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    """``out[c, j] = Cov(cols[:, j], y | assignment == c)``; NaN for cells with < 1 row."""
    m = cols.shape[1]
    out = np.full((k, m), np.nan)
    for c in range(k):
        mask = assignment == c
        if not mask.any():
            continue
        for j in range(m):
            out[c, j] = masked_cov(cols[:, j], y, mask)
    return out


def chebyshev_matrix(P: np.ndarray) -> np.ndarray:
    """Pairwise ℓ∞ distances between rows of ``P``."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    D = np.zeros((P.shape[0], P.shape[0]))
    for j in range(P.shape[1]):
        col = P[:, j]
        np.maximum(D, np.abs(col[:, None] - col[None, :]), out=D)
    return D


def _recompute(D: np.ndarray, i: int, nn: np.ndarray, mind: np.ndarray) -> None:
    row = D[i, i + 1:]
    if row.size == 0:
        nn[i] = -1
        mind[i] = np.inf
        return
    j = int(np.argmin(row))
    nn[i] = i + 1 + j
    mind[i] = row[j]


def complete_linkage(D: np.ndarray, stop_k: int, max_dist: float) -> np.ndarray:
    """Agglomerate under complete linkage until ``stop_k`` clusters remain or the
    closest pair is farther than ``max_dist``.

    ``D`` is a symmetric distance matrix and is overwritten. Ties go to the
    lexicographically smallest ``(i, j)`` pair. Returns, for each point, the
    smallest index in its cluster.
    """
    n = D.shape[0]
    np.fill_diagonal(D, np.inf)
    nn = np.full(n, -1, dtype=np.int64)
    mind = np.full(n, np.inf)
    parent = np.arange(n, dtype=np.int64)
    for i in range(n):
        _recompute(D, i, nn, mind)
    n_active = n
    while n_active > stop_k:
        i = int(np.argmin(mind))
        d = mind[i]
        if not d <= max_dist:
            break
        j = int(nn[i])
        merged = np.maximum(D[i], D[j])
        D[i, :] = merged
        D[:, i] = merged
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        mind[j] = np.inf
        nn[j] = -1
        parent[j] = i
        n_active -= 1
        _recompute(D, i, nn, mind)
        head = nn[:i]
        for k in np.flatnonzero((head == i) | (head == j)):
            _recompute(D, int(k), nn, mind)
        mid = nn[i + 1:j]
        for k in np.flatnonzero(mid == j):
            _recompute(D, int(k) + i + 1, nn, mind)
    # merges always point to a smaller index, so one forward pass resolves roots
    for p in range(n):
        parent[p] = parent[parent[p]]
    return parent


def best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int):
    """Best weighted squared-error split of one node.

    Returns ``(feature, threshold, gain)``; ``feature == -1`` if no admissible
    split exists. Gain is the reduction in weighted SSE. Ties keep the first
    feature, then the lowest threshold.
    """
    n, d = X.shape
    best_f, best_t, best_g = -1, 0.0, -np.inf
    if n < 2 * min_leaf:
        return best_f, best_t, best_g
    wy = w * y
    w_tot = np.cumsum(w)[-1]
    wy_tot = np.cumsum(wy)[-1]
    base = wy_tot * wy_tot / w_tot
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cw = np.cumsum(w[order])
        cwy = np.cumsum(wy[order])
        # candidate p: left = rows [0, p], right = rows (p, n)
        p = np.arange(min_leaf - 1, n - min_leaf)
        if p.size == 0:
            continue
        ok = xs[p] < xs[p + 1]
        wl = cw[p]
        wr = w_tot - wl
        ok &= (wl > 0) & (wr > 0)
        if not ok.any():
            continue
        p = p[ok]
        wl = wl[ok]
        wr = wr[ok]
        wyl = cwy[p]
        wyr = wy_tot - wyl
        gain = wyl * wyl / wl + wyr * wyr / wr - base
        a = int(np.argmax(gain))
        if gain[a] > best_g:
            best_g = float(gain[a])
            best_f = f
            lo, hi = xs[p[a]], xs[p[a] + 1]
            t = (lo + hi) / 2.0
            best_t = float(lo if t >= hi else t)
    return best_f, best_t, best_g
