"""Behaviour of the per-cell constant predictor when users comply selectively.

A compliance policy π maps features to {0, 1}; π = 1 means the user
adopts the recommendation. Within a cell k that is α-indistinguishable
with respect to π and to every product f·π,

    E_k[(Y − E_k[Y])² | π = 1] ≤ E_k[(Y − f)² | π = 1] + 6α / P_k(π = 1).

Without such a partition a policy can always be found on which some
constant beats a model that is not the conditional mean.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .data import Dataset, Partition, PredictionMatrix, check_aligned
from .errors import BadParam, DegenerateCell, EmptyCell, NoAdversarialSubset, ValidationError

POLICY_KINDS = ("stump", "tree", "always", "never_on_set")


@dataclass(frozen=True)
class CompliancePolicy:
    """Deterministic {0, 1} function of the feature vector.

    * ``stump``: complies where ``x[feature] >= threshold`` (``direction=+1``)
      or where ``x[feature] < threshold`` (``direction=-1``);
    * ``tree``: routes on ``x[feature] < threshold`` to ``children[0]``,
      else ``children[1]``; children are stumps or ``always`` (depth ≤ 2);
    * ``always``: complies everywhere;
    * ``never_on_set``: complies except on rows whose feature tuple is in
      ``excluded``.
    """

    kind: str
    feature: int = 0
    threshold: float = 0.0
    direction: int = 1
    children: tuple = ()
    excluded: frozenset = frozenset()
    name: str = ""

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise BadParam(f"unknown policy kind {self.kind!r}")
        if self.kind == "stump" and self.direction not in (1, -1):
            raise BadParam("direction must be +1 or -1")
        if self.kind == "tree":
            if len(self.children) != 2:
                raise BadParam("a tree policy needs two children")
            if any(c.kind not in ("stump", "always") for c in self.children):
                raise BadParam("tree children must be stumps or always")
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    @classmethod
    def always(cls) -> "CompliancePolicy":
        return cls("always")

    @classmethod
    def stump(cls, feature, threshold: float, direction: int = 1,
              feature_names: Sequence[str] = ()) -> "CompliancePolicy":
        if isinstance(feature, str):
            if feature not in feature_names:
                raise BadParam(f"unknown feature {feature!r}")
            feature = list(feature_names).index(feature)
        return cls("stump", int(feature), float(threshold), int(direction))

    @classmethod
    def tree(cls, feature: int, threshold: float, left: "CompliancePolicy",
             right: "CompliancePolicy") -> "CompliancePolicy":
        return cls("tree", int(feature), float(threshold), children=(left, right))

    @classmethod
    def never_on_set(cls, rows) -> "CompliancePolicy":
        return cls("never_on_set", excluded=frozenset(tuple(map(float, r)) for r in rows))

    def _default_name(self) -> str:
        if self.kind == "stump":
            op = ">=" if self.direction == 1 else "<"
            return f"x{self.feature}{op}{self.threshold:.6g}"
        if self.kind == "tree":
            return f"[x{self.feature}<{self.threshold:.6g}?{self.children[0].name}:{self.children[1].name}]"
        if self.kind == "never_on_set":
            return f"never_on_{len(self.excluded)}_rows"
        return "always"

    def mask(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if self.kind == "always":
            return np.ones(X.shape[0], dtype=bool)
        if self.kind == "stump":
            col = X[:, self.feature]
            return col >= self.threshold if self.direction == 1 else col < self.threshold
        if self.kind == "tree":
            go_left = X[:, self.feature] < self.threshold
            return np.where(go_left, self.children[0].mask(X), self.children[1].mask(X))
        return np.array([tuple(map(float, r)) not in self.excluded for r in X], dtype=bool)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "name": self.name}
        if self.kind in ("stump", "tree"):
            d.update(feature=self.feature, threshold=self.threshold)
        if self.kind == "stump":
            d["direction"] = self.direction
        if self.kind == "tree":
            d["children"] = [c.to_dict() for c in self.children]
        if self.kind == "never_on_set":
            d["excluded"] = sorted(list(r) for r in self.excluded)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompliancePolicy":
        kind = d["kind"]
        if kind == "stump":
            return cls("stump", d["feature"], d["threshold"], d.get("direction", 1), name=d.get("name", ""))
        if kind == "tree":
            kids = tuple(cls.from_dict(c) for c in d["children"])
            return cls("tree", d["feature"], d["threshold"], children=kids, name=d.get("name", ""))
        if kind == "never_on_set":
            return cls.never_on_set(d["excluded"])
        return cls(kind, name=d.get("name", ""))


def gen_policy_class(kind: str, features, count: int, seed: int = 0) -> list[CompliancePolicy]:
    """Sample ``count`` policies whose thresholds are observed feature values.

    Identical (kind, features, count, seed) always gives identical policies.
    """
    if count < 1:
        raise BadParam("count must be >= 1")
    if kind == "always":
        return [CompliancePolicy.always() for _ in range(count)]
    if kind not in ("stump", "tree"):
        raise BadParam(f"cannot sample policies of kind {kind!r}")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    rng = np.random.default_rng(seed)

    def draw_stump() -> CompliancePolicy:
        j = int(rng.integers(X.shape[1]))
        t = float(X[int(rng.integers(X.shape[0])), j])
        return CompliancePolicy.stump(j, t, 1 if rng.random() < 0.5 else -1)

    out = []
    for _ in range(count):
        if kind == "stump":
            out.append(draw_stump())
        else:
            root = draw_stump()
            out.append(CompliancePolicy.tree(root.feature, root.threshold, draw_stump(), draw_stump()))
    return out


@dataclass(frozen=True)
class ProductAudit:
    alpha_pi: float
    alpha_prod: float

    @property
    def alpha(self) -> float:
        return max(self.alpha_pi, self.alpha_prod)

    def to_dict(self) -> dict:
        return {"alpha_pi": self.alpha_pi, "alpha_prod": self.alpha_prod, "alpha": self.alpha}


def audit_product_class(dataset: Dataset, preds: PredictionMatrix, policies: Sequence[CompliancePolicy],
                        partition: Partition, strict: bool = True) -> ProductAudit:
    """Largest |Cov_k(Y, π)| and |Cov_k(Y, f·π)| over cells, policies and models.

    Cells with fewer than two rows raise ``DegenerateCell``; with
    ``strict=False`` they are left out of the maximum instead.
    """
    check_aligned(dataset, preds, partition)
    if strict:
        for k in range(partition.K):
            if partition.cell_sizes[k] < 2:
                raise DegenerateCell(k, int(partition.cell_sizes[k]))
    if not policies:
        raise BadParam("no policies")
    pis = np.column_stack([p.mask(dataset.features) for p in policies]).astype(np.float64)
    prods = (preds.preds[:, :, None] * pis[:, None, :]).reshape(dataset.n, -1)
    y = dataset.outcome
    ok = partition.cell_sizes >= 2
    if not ok.any():
        raise DegenerateCell(0, int(partition.cell_sizes.max(initial=0)))
    a_pi = np.abs(kernels.cell_covariances(pis, y, partition.assignment, partition.K)[ok]).max()
    a_prod = np.abs(kernels.cell_covariances(prods, y, partition.assignment, partition.K)[ok]).max()
    return ProductAudit(float(a_pi), float(a_prod))


@dataclass(frozen=True)
class CanonicalPredictor:
    """Per-cell mean outcome; ignores both the features and any policy."""

    means: tuple[float, ...]

    def predict(self, cells) -> np.ndarray:
        return np.asarray(self.means)[np.asarray(cells, dtype=np.int64)]


def canonical_predictor(dataset: Dataset, partition: Partition) -> CanonicalPredictor:
    check_aligned(dataset, partition)
    means = []
    for k in range(partition.K):
        y = dataset.outcome[partition.mask(k)]
        if y.size == 0:
            raise EmptyCell(f"cell {k} is empty")
        means.append(math.fsum(y) / y.size)
    return CanonicalPredictor(tuple(means))


@dataclass(frozen=True)
class RobustnessRow:
    cell: int
    model: str
    policy: str
    n_comply: int
    p_comply: float
    lhs: Optional[float]
    rhs: Optional[float]
    holds: Optional[bool]
    vacuous: bool

    def to_dict(self) -> dict:
        return {"cell": self.cell, "model": self.model, "policy": self.policy,
                "n_comply": self.n_comply, "p_comply": self.p_comply, "lhs": self.lhs,
                "rhs": self.rhs, "holds": self.holds, "vacuous": self.vacuous}


@dataclass(frozen=True)
class RobustnessReport:
    rows: tuple[RobustnessRow, ...]
    alpha_used: float
    policies: tuple[str, ...] = field(default=())

    @property
    def violations(self) -> tuple[RobustnessRow, ...]:
        return tuple(r for r in self.rows if r.holds is False)

    @property
    def vacuous_rows(self) -> tuple[RobustnessRow, ...]:
        return tuple(r for r in self.rows if r.vacuous)

    def to_dict(self) -> dict:
        return {"alpha_used": self.alpha_used, "policies": list(self.policies),
                "n_rows": len(self.rows), "n_violations": len(self.violations),
                "n_vacuous": len(self.vacuous_rows), "rows": [r.to_dict() for r in self.rows]}


def _policy_rows(dataset, preds, partition, policy, alpha, canon, tol) -> list[RobustnessRow]:
    pi = policy.mask(dataset.features)
    y = dataset.outcome
    rows = []
    for k in range(partition.K):
        cell = partition.mask(k)
        nk = int(cell.sum())
        comp = cell & pi
        nc = int(comp.sum())
        p = nc / nk if nk else 0.0
        if nc == 0:
            for name in preds.model_names:
                rows.append(RobustnessRow(k, name, policy.name, 0, p, None, None, None, True))
            continue
        yc = y[comp]
        d = yc - canon.means[k]
        lhs = math.fsum(d * d) / nc
        slack = 6.0 * alpha / p
        for j, name in enumerate(preds.model_names):
            e = yc - preds.preds[comp, j]
            rhs = math.fsum(e * e) / nc + slack
            rows.append(RobustnessRow(k, name, policy.name, nc, p, lhs, rhs, lhs <= rhs + tol, False))
    return rows


def evaluate_under_policy(dataset: Dataset, preds: PredictionMatrix, partition: Partition,
                          policy: CompliancePolicy, alpha: float, tol: float = 1e-12) -> RobustnessReport:
    """Evaluate the noncompliance bound for one policy, per (cell, model).

    ``alpha`` should come from :func:`audit_product_class` on a policy set
    containing ``policy``. Cells without complied rows are marked vacuous.
    """
    check_aligned(dataset, preds, partition)
    canon = canonical_predictor(dataset, partition)
    rows = _policy_rows(dataset, preds, partition, policy, alpha, canon, tol)
    return RobustnessReport(tuple(rows), float(alpha), (policy.name,))


def evaluate_policies(dataset: Dataset, preds: PredictionMatrix, partition: Partition,
                      policies: Sequence[CompliancePolicy], alpha: Optional[float] = None,
                      workers: int = 1, tol: float = 1e-12, strict: bool = True) -> RobustnessReport:
    """All policies at once; ``alpha`` defaults to the audited product-class value."""
    if alpha is None:
        alpha = audit_product_class(dataset, preds, policies, partition, strict).alpha
    canon = canonical_predictor(dataset, partition)

    def one(p):
        return _policy_rows(dataset, preds, partition, p, alpha, canon, tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(one, policies))
    else:
        chunks = [one(p) for p in policies]
    rows = tuple(r for c in chunks for r in c)
    return RobustnessReport(rows, float(alpha), tuple(p.name for p in policies))


@dataclass(frozen=True, eq=False)
class AdversarialSubset:
    subset: np.ndarray
    group: tuple[float, ...]
    constant: float
    mse_f: float
    mse_const: float

    @property
    def gap(self) -> float:
        return self.mse_f - self.mse_const

    def to_dict(self) -> dict:
        return {"group": list(self.group), "n": int(self.subset.sum()), "constant": self.constant,
                "mse_f": self.mse_f, "mse_const": self.mse_const, "gap": self.gap}


def group_gaps(features, outcome, scores, decimals: Optional[int] = None):
    """Per group of identical feature rows (≥ 2 members): (key, mask, mean, mse_f, mse_const)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if decimals is not None:
        X = np.round(X, decimals)
    y = np.asarray(outcome, dtype=np.float64)
    f = np.asarray(scores, dtype=np.float64)
    if f.shape != y.shape:
        raise ValidationError("scores and outcome differ in length")
    keys, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    out = []
    for g in np.flatnonzero(counts >= 2):
        m = inverse == g
        yg = y[m]
        c = math.fsum(yg) / yg.size
        mse_f = math.fsum((yg - f[m]) ** 2) / yg.size
        mse_c = math.fsum((yg - c) ** 2) / yg.size
        out.append((tuple(map(float, keys[g])), m, c, mse_f, mse_c))
    return out


def adversarial_policy(dataset: Dataset, scores, decimals: Optional[int] = None,
                       tol: float = 1e-12) -> AdversarialSubset:
    """Complied subset on which the group mean strictly beats ``scores``.

    Groups are sets of rows with identical (optionally rounded) features,
    so the outcome's conditional mean is constant on each. Returns the group
    with the largest MSE advantage for its constant mean.
    """
    groups = group_gaps(dataset.features, dataset.outcome, scores, decimals)
    if not groups:
        raise ValidationError("no duplicate feature rows; quantize continuous features with decimals=")
    best = max(range(len(groups)), key=lambda i: (groups[i][3] - groups[i][4], -i))
    key, m, c, mse_f, mse_c = groups[best]
    if not mse_f - mse_c > tol:
        raise NoAdversarialSubset("scores equal the group means on every duplicate-feature group")
    return AdversarialSubset(m, key, c, mse_f, mse_c)
