"""Synthetic datasets with known ground truth.

Generators
----------
side_info
    Cells are set by ``x0``. A latent coin U ~ Bernoulli(½) is hidden from
    the features; with probability ``q = 4·effect`` the outcome copies U,
    otherwise it is Bernoulli(p_k). The expert reports U, so
    Cov_k(Y, Ŷ) = effect in every cell while no feature carries U.
tree_realizable
    E[Y | X] is a fixed depth-3 regression tree on the first three features
    with leaf values in bin interiors; Y adds uniform noise of half-width
    ``noise``.
sufficiency
    Binary models f_j = 1{x_{j+1} ≥ ½}; cells are set by ``x0``. Given
    f̃ = f_0, Y and Ŷ are independent Bernoulli draws whose means depend on
    f̃, so f̃ explains all of the expert's signal.
adversarial_groups
    One binary feature with balanced groups; E[Y | x=0] = p0,
    E[Y | x=1] = p1, and a single model f ≡ ½.

Streams are seeded with ``[seed, generator index]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, PredictionMatrix, save_dataset, save_predictions
from .errors import BadSpec

GENERATORS = ("side_info", "tree_realizable", "sufficiency", "adversarial_groups")


@dataclass(frozen=True)
class SynthSpec:
    generator: str
    n: int = 2000
    d: int = 3
    effect: float = 0.15
    seed: int = 0
    K: int = 3
    m: int = 5
    noise: float = 0.03
    p0: float = 0.2
    p1: float = 0.8
    expert: bool = True

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise BadSpec(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.n < 2:
            raise BadSpec("n must be >= 2")
        if self.d < 1 or self.K < 1 or self.m < 1:
            raise BadSpec("d, K and m must be >= 1")
        if self.generator == "side_info" and not 0 <= self.effect <= 0.25:
            raise BadSpec("side_info effect must lie in [0, 0.25]")
        if self.generator == "tree_realizable" and (self.d < 3 or not 0 <= self.noise <= 0.05):
            raise BadSpec("tree_realizable needs d >= 3 and noise in [0, 0.05]")
        if self.generator == "sufficiency" and self.d < self.m + 1:
            raise BadSpec("sufficiency needs d >= m + 1 (x0 for cells, one feature per binary model)")
        if not (0 <= self.p0 <= 1 and 0 <= self.p1 <= 1):
            raise BadSpec("p0 and p1 must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthResult:
    dataset: Dataset
    preds: PredictionMatrix
    cells: np.ndarray
    truth: dict = field(default_factory=dict)

    def save(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_dataset(self.dataset, out / "data.csv")
        save_predictions(self.preds, out / "preds.csv", self.dataset.row_ids)
        (out / "truth.json").write_text(json.dumps(self.truth, indent=2) + "\n")
        return {"data": str(out / "data.csv"), "preds": str(out / "preds.csv"), "truth": str(out / "truth.json")}


def _rng(spec: SynthSpec) -> np.random.Generator:
    return np.random.default_rng([spec.seed, GENERATORS.index(spec.generator)])


def _cells_from_x0(x0: np.ndarray, K: int) -> np.ndarray:
    return np.minimum((x0 * K).astype(np.int64), K - 1)


def base_rates(K: int) -> np.ndarray:
    return np.array([0.5]) if K == 1 else 0.2 + 0.6 * np.arange(K) / (K - 1)


def gen_side_info(spec: SynthSpec) -> SynthResult:
    rng = _rng(spec)
    n, K = spec.n, spec.K
    X = rng.random((n, spec.d))
    cells = _cells_from_x0(X[:, 0], K)
    pk = base_rates(K)[cells]
    u = rng.random(n) < 0.5
    q = 4.0 * spec.effect
    copy = rng.random(n) < q
    y = np.where(copy, u, rng.random(n) < pk).astype(np.float64)
    yhat = u.astype(np.float64) if spec.expert else None
    # models see the cell rate plus a small tilt in the other coordinates
    cols = []
    for j in range(spec.m):
        tilt = X[:, 1 + j % (spec.d - 1)] - 0.5 if spec.d > 1 else 0.0
        cols.append(np.clip(pk + 0.02 * (j + 1) / spec.m * tilt, 0.0, 1.0))
    truth = {
        "generator": spec.generator, "spec": spec.to_dict(),
        "cell_rule": "floor(K * x0)", "base_rates": base_rates(K).tolist(),
        "copy_probability": q, "planted_cov": spec.effect,
        "E[Y|X]": "q/2 + (1-q)*p_cell", "E[Y|X,U]": "q*U + (1-q)*p_cell",
    }
    ds = Dataset(X, y, expert=yhat)
    return SynthResult(ds, PredictionMatrix(np.column_stack(cols), tuple(f"f{j}" for j in range(spec.m))), cells, truth)


TREE_LEAVES = (0.05, 0.25, 0.45, 0.65, 0.35, 0.55, 0.75, 0.95)


def tree_mean(X: np.ndarray) -> np.ndarray:
    """The planted depth-3 tree used by ``tree_realizable``."""
    a = X[:, 0] >= 0.5
    b = np.where(a, X[:, 2] >= 0.6, X[:, 1] >= 0.3)
    c = np.where(b, X[:, 2] >= 0.25, X[:, 1] >= 0.7)
    leaf = a.astype(int) * 4 + b.astype(int) * 2 + c.astype(int)
    return np.asarray(TREE_LEAVES)[leaf]


def gen_tree_realizable(spec: SynthSpec) -> SynthResult:
    rng = _rng(spec)
    X = rng.random((spec.n, spec.d))
    mu = tree_mean(X)
    y = np.clip(mu + rng.uniform(-spec.noise, spec.noise, spec.n), 0.0, 1.0)
    yhat = np.clip(mu + rng.uniform(-0.1, 0.1, spec.n), 0.0, 1.0) if spec.expert else None
    cols = [np.clip(X[:, j % spec.d], 0.0, 1.0) for j in range(spec.m)]
    truth = {"generator": spec.generator, "spec": spec.to_dict(), "leaf_values": list(TREE_LEAVES),
             "E[Y|X]": "depth-3 tree on x0, x1, x2"}
    cells = (mu * 10).astype(np.int64)
    return SynthResult(Dataset(X, y, expert=yhat),
                       PredictionMatrix(np.column_stack(cols), tuple(f"f{j}" for j in range(spec.m))), cells, truth)


def gen_sufficiency(spec: SynthSpec) -> SynthResult:
    rng = _rng(spec)
    n, K = spec.n, spec.K
    X = rng.random((n, spec.d))
    cells = _cells_from_x0(X[:, 0], K)
    F = (X[:, 1:spec.m + 1] >= 0.5).astype(np.float64)
    ft = F[:, 0]
    base = base_rates(K)[cells]
    py = np.clip(base + spec.effect * (ft - 0.5), 0.0, 1.0)
    ph = np.clip(0.3 + 0.4 * ft, 0.0, 1.0)
    y = (rng.random(n) < py).astype(np.float64)
    yhat = (rng.random(n) < ph).astype(np.float64) if spec.expert else None
    truth = {"generator": spec.generator, "spec": spec.to_dict(), "explaining_model": "f0",
             "P(Y=1|f0,cell)": "p_cell + effect*(f0 - 1/2)", "P(Yhat=1|f0)": "0.3 + 0.4*f0"}
    return SynthResult(Dataset(X, y, expert=yhat), PredictionMatrix(F, tuple(f"f{j}" for j in range(F.shape[1]))),
                       cells, truth)


def gen_adversarial_groups(spec: SynthSpec) -> SynthResult:
    rng = _rng(spec)
    x = np.zeros(spec.n)
    x[spec.n // 2:] = 1.0
    p = np.where(x == 1.0, spec.p1, spec.p0)
    y = (rng.random(spec.n) < p).astype(np.float64)
    truth = {"generator": spec.generator, "spec": spec.to_dict(), "group_means": [spec.p0, spec.p1],
             "model": "f = 0.5", "expected_gap": max((0.5 - spec.p0) ** 2, (0.5 - spec.p1) ** 2)}
    return SynthResult(Dataset(x[:, None], y), PredictionMatrix(np.full((spec.n, 1), 0.5), ("f",)),
                       x.astype(np.int64), truth)


_GEN = {"side_info": gen_side_info, "tree_realizable": gen_tree_realizable,
        "sufficiency": gen_sufficiency, "adversarial_groups": gen_adversarial_groups}


def generate(spec: SynthSpec) -> SynthResult:
    return _GEN[spec.generator](spec)


def spec_from_dict(d: dict, seed: Optional[int] = None) -> SynthSpec:
    d = dict(d)
    if seed is not None:
        d.setdefault("seed", seed)
    unknown = set(d) - set(SynthSpec.__dataclass_fields__)
    if unknown:
        raise BadSpec(f"unknown synth fields {sorted(unknown)}")
    return SynthSpec(**d)
