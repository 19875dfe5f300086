"""Level-set boosting over shallow regression trees.

A predictor h: X -> [0, 1] is refined until, within each of its eleven
approximate level sets {0}, (0, .1], ..., (.9, 1], the best depth-5 tree
found by the CART oracle improves squared error by less than α². Those
level sets are then used as a partition.

The oracle is greedy CART rather than exact ERM and leaves are confined to
[0, 1], so the 2α multicalibration level of the level sets is a heuristic
guarantee for this class.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import Dataset, Partition
from .errors import BadParam, DimensionMismatch, EmptyInput, NoConvergence

MAX_DEPTH = 5
# upper edges of bins 1..9; bin 0 is {0}, bin 10 is (.9, 1]
BIN_UPPER = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
N_BINS = 11


def bin_of(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    return np.where(h <= 0.0, 0, 1 + np.searchsorted(BIN_UPPER, h, side="left")).astype(np.int64)


def bin_label(b: int) -> str:
    if b == 0:
        return "{0}"
    lo = 0.0 if b == 1 else BIN_UPPER[b - 2]
    hi = 1.0 if b == 10 else BIN_UPPER[b - 1]
    return f"({lo:g}, {hi:g}]"


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    Internal nodes send ``x[feature] <= threshold`` left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"tree expects {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(MAX_DEPTH + 1):
            f = self.feature[node]
            live = f >= 0
            if not live.any():
                break
            r, nd, ff = rows[live], node[live], f[live]
            go_left = X[r, ff] <= self.threshold[nd]
            node[live] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node].copy()

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
            int(d["n_features"]),
        )


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def build(self, d: int) -> RegressionTree:
        return RegressionTree(
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
            d,
        )


def fit_tree(features, target, weights=None, max_depth: int = MAX_DEPTH, min_leaf: int = 1) -> RegressionTree:
    """Greedy CART for weighted squared error.

    Every impure node with room to split takes its best (feature, midpoint)
    split, even at zero gain, so patterns such as XOR that only pay off one
    level down are still reachable. Leaves predict the weighted mean clamped
    to [0, 1].
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("fit_tree needs at least one row")
    if not 0 <= max_depth <= MAX_DEPTH:
        raise BadParam(f"max_depth must be in [0, {MAX_DEPTH}]")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    b = _Builder()

    def grow(rows: np.ndarray, depth: int) -> int:
        wr, yr = w[rows], y[rows]
        mean = float(np.clip(np.dot(wr, yr) / wr.sum(), 0.0, 1.0))
        node = b.add(mean)
        if depth >= max_depth or rows.size < 2 * min_leaf or np.ptp(yr) == 0.0:
            return node
        f, t, _ = kernels.best_split(X[rows], yr, wr, min_leaf)
        if f < 0:
            return node
        go_left = X[rows, f] <= t
        b.feature[node] = int(f)
        b.threshold[node] = float(t)
        b.left[node] = grow(rows[go_left], depth + 1)
        b.right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return b.build(X.shape[1])


def random_tree(rng: np.random.Generator, features, max_depth: int = MAX_DEPTH, p_split: float = 0.8) -> RegressionTree:
    """A random member of the depth-≤5 tree class with leaves in [0, 1].

    Thresholds are drawn uniformly over each feature's observed range.
    """
    X = np.asarray(features, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    b = _Builder()

    def grow(depth: int) -> int:
        node = b.add(float(rng.random()))
        if depth < max_depth and rng.random() < p_split:
            f = int(rng.integers(X.shape[1]))
            b.feature[node] = f
            b.threshold[node] = float(rng.uniform(lo[f], hi[f]))
            b.left[node] = grow(depth + 1)
            b.right[node] = grow(depth + 1)
        return node

    grow(0)
    return b.build(X.shape[1])


@dataclass(frozen=True)
class BoostConfig:
    alpha: float = 0.05
    max_rounds: int = 200
    min_cell: int = 10
    seed: int = 0
    max_depth: int = MAX_DEPTH
    min_leaf: int = 1

    def __post_init__(self):
        if not self.alpha > 0:
            raise BadParam("alpha must be > 0")
        if self.max_rounds < 1:
            raise BadParam("max_rounds must be >= 1")
        if self.min_cell < 1:
            raise BadParam("min_cell must be >= 1")


@dataclass(frozen=True)
class Stage:
    bin: int
    tree: RegressionTree


@dataclass(frozen=True, eq=False)
class BoostedPredictor:
    initial: float
    stages: tuple[Stage, ...]
    n_features: int
    alpha: float
    rounds: int
    converged: bool
    final_values: Optional[np.ndarray] = None
    frozen_bins: tuple[int, ...] = ()

    bin_upper = BIN_UPPER

    def predict(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"predictor expects {self.n_features} features, got {X.shape[1]}")
        h = np.full(X.shape[0], self.initial)
        for st in self.stages:
            rows = np.flatnonzero(bin_of(h) == st.bin)
            if rows.size:
                h[rows] = st.tree.predict(X[rows])
        return h

    def to_dict(self) -> dict:
        return {
            "initial": self.initial,
            "alpha": self.alpha,
            "rounds": self.rounds,
            "converged": self.converged,
            "n_features": self.n_features,
            "bin_upper": BIN_UPPER.tolist(),
            "frozen_bins": list(self.frozen_bins),
            "stages": [{"bin": s.bin, "tree": s.tree.to_dict()} for s in self.stages],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedPredictor":
        stages = tuple(Stage(int(s["bin"]), RegressionTree.from_dict(s["tree"])) for s in d["stages"])
        return cls(d["initial"], stages, int(d["n_features"]), d["alpha"], int(d["rounds"]),
                   bool(d["converged"]), None, tuple(d.get("frozen_bins", ())))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "BoostedPredictor":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.dot(d, d) / d.size)


def boost(dataset: Dataset, config: BoostConfig = BoostConfig()) -> BoostedPredictor:
    """Refine h bin by bin until no level set admits an α² improvement.

    Each sweep visits bins in index order. A bin with at least ``min_cell``
    rows gets a tree fitted to Y on its rows; if the tree beats h there by
    more than α² in mean squared error, h is replaced by the tree on that bin
    and rows are re-binned before the next bin is visited. Smaller bins are
    frozen. Hitting ``max_rounds`` with pending improvements issues a
    ``NoConvergence`` warning and returns the predictor flagged.
    """
    X, y = dataset.features, dataset.outcome
    if dataset.n < config.min_cell:
        raise BadParam(f"n={dataset.n} is below min_cell={config.min_cell}")
    a2 = config.alpha ** 2
    initial = float(np.clip(math.fsum(y) / y.size, 0.0, 1.0))
    h = np.full(dataset.n, initial)
    stages: list[Stage] = []
    rounds = 0
    converged = False
    for _ in range(config.max_rounds):
        updated = False
        for b in range(N_BINS):
            rows = np.flatnonzero(bin_of(h) == b)
            if rows.size < config.min_cell:
                continue
            tree = fit_tree(X[rows], y[rows], max_depth=config.max_depth, min_leaf=config.min_leaf)
            pred = tree.predict(X[rows])
            if _mse(h[rows], y[rows]) - _mse(pred, y[rows]) > a2:
                h[rows] = pred
                stages.append(Stage(b, tree))
                updated = True
        if not updated:
            converged = True
            break
        rounds += 1
    else:
        # the last sweep may have been the one that fixed everything
        converged = not _pending(X, y, h, config)
    if not converged:
        warnings.warn(f"boosting stopped after {config.max_rounds} rounds with violations remaining",
                      NoConvergence, stacklevel=2)
    bins = bin_of(h)
    frozen = tuple(int(b) for b in range(N_BINS) if 0 < (bins == b).sum() < config.min_cell)
    return BoostedPredictor(initial, tuple(stages), X.shape[1], config.alpha, rounds, converged,
                            h.copy(), frozen)


def _pending(X, y, h, config: BoostConfig) -> bool:
    return any(r["improvement"] > config.alpha ** 2 and not r["frozen"]
               for r in _bin_improvements(X, y, h, config.max_depth, config.min_leaf, config.min_cell))


def _bin_improvements(X, y, h, max_depth, min_leaf, min_cell):
    out = []
    bins = bin_of(h)
    for b in range(N_BINS):
        rows = np.flatnonzero(bins == b)
        if rows.size == 0:
            continue
        tree = fit_tree(X[rows], y[rows], max_depth=max_depth, min_leaf=min_leaf)
        imp = _mse(h[rows], y[rows]) - _mse(tree.predict(X[rows]), y[rows])
        out.append({"bin": b, "n": int(rows.size), "improvement": imp, "frozen": rows.size < min_cell})
    return out


def level_set_audit(predictor: BoostedPredictor, dataset: Dataset, max_depth: int = MAX_DEPTH,
                    min_leaf: int = 1, min_cell: int = 1) -> list[dict]:
    """Refit the oracle within every nonempty bin of h on ``dataset``.

    Returns one record per bin with the in-bin MSE improvement of the
    refitted tree over h.
    """
    h = predictor.predict(dataset.features)
    return _bin_improvements(dataset.features, dataset.outcome, h, max_depth, min_leaf, min_cell)


def level_set_partition(predictor: BoostedPredictor, dataset: Dataset) -> Partition:
    """Cells are the nonempty bins of h, ordered by bin index; ``labels`` are bin indices."""
    bins = bin_of(predictor.predict(dataset.features))
    present = np.unique(bins)
    return Partition(np.searchsorted(present, bins), int(present.size), "boost",
                     labels=tuple(int(b) for b in present))


def predict(predictor: BoostedPredictor, features) -> np.ndarray:
    return predictor.predict(features)
