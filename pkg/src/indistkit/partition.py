"""Multicalibrated partitions without boosting.

Two constructions, both certified through prediction ranges: a cell on
which every model's range is at most 4α is α-indistinguishable for any
outcome in [0, 1].

* complete-linkage clustering of finite-class prediction vectors in the
  Chebyshev metric (complete linkage bounds cell diameter directly);
* greedy farthest-point nets for Lipschitz classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .data import Partition, PredictionMatrix
from .errors import BadParam, EmptyCell, InfeasibleK


@dataclass(frozen=True)
class ClusterSpec:
    """Exactly one of ``k`` (cell count) or ``diameter`` (budget, e.g. 4α) is set.

    ``seed`` only reorders rows before agglomeration, changing which of
    several equidistant pairs merges first; ``None`` keeps file order.
    """

    k: Optional[int] = None
    diameter: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if (self.k is None) == (self.diameter is None):
            raise BadParam("set exactly one of k or diameter")
        if self.k is not None and self.k < 1:
            raise BadParam("k must be >= 1")
        if self.diameter is not None and not self.diameter >= 0:
            raise BadParam("diameter budget must be >= 0")

    @property
    def linkage(self) -> str:
        return "complete"


def chebyshev_matrix(P: np.ndarray) -> np.ndarray:
    return kernels.chebyshev_matrix(np.asarray(P, dtype=np.float64))


def cluster_finite_class(preds: PredictionMatrix, spec: ClusterSpec) -> Partition:
    """Complete-linkage clustering of prediction rows under the ℓ∞ metric.

    Identical rows are grouped before agglomeration (they sit at distance 0
    and would merge first anyway). Cells are numbered by their lowest row
    index; ``labels`` holds that representative row.
    """
    P = preds.preds
    n = P.shape[0]
    uniq, first, inverse = np.unique(P, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first, kind="stable")
    if spec.seed is not None:
        order = order[np.random.default_rng(spec.seed).permutation(order.size)]
    n_distinct = order.size
    if spec.k is not None and spec.k > n_distinct:
        raise InfeasibleK(f"k={spec.k} exceeds the {n_distinct} distinct prediction rows")
    D = chebyshev_matrix(uniq[order])
    if spec.k is not None:
        roots = kernels.complete_linkage(D, spec.k, np.inf)
    else:
        roots = kernels.complete_linkage(D, 1, float(spec.diameter))
    # distinct-row position -> root position, then back to rows
    pos_of_uniq = np.empty(n_distinct, dtype=np.int64)
    pos_of_uniq[order] = np.arange(n_distinct)
    row_root = roots[pos_of_uniq[inverse]]
    part = Partition.from_labels(row_root, provenance="cluster")
    reps = tuple(int(np.flatnonzero(part.assignment == k)[0]) for k in range(part.K))
    return Partition(part.assignment, part.K, "cluster", labels=reps)


def cell_diameter(preds: PredictionMatrix, partition: Partition, k: int) -> float:
    """Chebyshev diameter of cell ``k``: the largest per-model range."""
    rows = preds.preds[partition.mask(k)]
    if rows.shape[0] == 0:
        raise EmptyCell(f"cell {k} is empty")
    return float((rows.max(axis=0) - rows.min(axis=0)).max())


def certify_partition(preds: PredictionMatrix, partition: Partition) -> list[float]:
    """Per-cell α implied by the range bound: diameter / 4. Empty cells get 0."""
    out = []
    for k in range(partition.K):
        out.append(cell_diameter(preds, partition, k) / 4.0 if partition.cell_sizes[k] else 0.0)
    return out


@dataclass(frozen=True)
class LipschitzSpec:
    """Net radius for an L-Lipschitz class.

    Cells of a radius-r net have diameter at most 2r, so the range of any
    L-Lipschitz model within a cell is at most 2Lr and the cell is certified
    at ``certified_alpha = L r / 2``.
    """

    L: float
    radius: float
    metric: str = "euclidean"

    def __post_init__(self):
        if not self.L > 0:
            raise BadParam("L must be > 0")
        if not self.radius > 0:
            raise BadParam("radius must be > 0")
        if self.metric not in ("euclidean", "chebyshev"):
            raise BadParam(f"unknown metric {self.metric!r}")

    @classmethod
    def from_alpha(cls, alpha: float, L: float, metric: str = "euclidean") -> "LipschitzSpec":
        return cls(L=L, radius=4.0 * alpha / L, metric=metric)

    @property
    def certified_alpha(self) -> float:
        return self.L * self.radius / 2.0


def _dist_to(points: np.ndarray, c: np.ndarray, metric: str) -> np.ndarray:
    diff = points - c
    if metric == "chebyshev":
        return np.abs(diff).max(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def epsilon_net_partition(points, spec: LipschitzSpec) -> Partition:
    """Greedy farthest-point net starting from row 0.

    Centers are added until every point lies within ``spec.radius`` of one;
    each point joins its nearest center (lowest center index on ties).
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise BadParam("no points")
    centers = [0]
    dist = [_dist_to(X, X[0], spec.metric)]
    nearest = dist[0].copy()
    while True:
        far = int(np.argmax(nearest))
        if nearest[far] <= spec.radius:
            break
        centers.append(far)
        d = _dist_to(X, X[far], spec.metric)
        dist.append(d)
        np.minimum(nearest, d, out=nearest)
    assign = np.argmin(np.vstack(dist), axis=0)
    return Partition(assign, len(centers), "net", labels=tuple(centers), centers=X[centers])


def assign_to_net(points, partition: Partition, metric: str = "euclidean") -> np.ndarray:
    """Nearest-center assignment of new points."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    D = np.vstack([_dist_to(X, c, metric) for c in partition.centers])
    return np.argmin(D, axis=0)
