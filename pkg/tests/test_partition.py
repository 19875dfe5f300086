import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indistkit.data import Dataset, Partition, PredictionMatrix
from indistkit.errors import BadParam, EmptyCell, InfeasibleK
from indistkit.indist import audit_partition
from indistkit.partition import (ClusterSpec, LipschitzSpec, assign_to_net, cell_diameter, certify_partition,
                                 chebyshev_matrix, cluster_finite_class, epsilon_net_partition)

from .conftest import cheb_diameter


def subset_diameters(P):
    """Chebyshev diameter of every subset of rows, indexed by bitmask."""
    n = P.shape[0]
    D = chebyshev_matrix(P)
    diam = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        others = [j for j in range(n) if rest >> j & 1]
        diam[mask] = max(diam[rest], max((D[low, j] for j in others), default=0.0))
    return diam


def best_three_partition(P):
    """Exhaustive minimum over all labelings into exactly 3 nonempty cells of the max cell diameter."""
    n = P.shape[0]
    diam = subset_diameters(P)
    labels = np.array(list(itertools.product(range(3), repeat=n)), dtype=np.int64)
    bits = 1 << np.arange(n)
    masks = np.stack([((labels == c) * bits).sum(axis=1) for c in range(3)], axis=1)
    ok = (masks > 0).all(axis=1)
    worst = diam[masks].max(axis=1)
    worst[~ok] = np.inf
    return float(worst.min())


def test_zero_budget_groups_identical_rows():
    pm = PredictionMatrix(np.array([[1, 1], [1, 1], [0, 1], [1, 0]], dtype=float))
    p = cluster_finite_class(pm, ClusterSpec(diameter=0.0))
    assert p.assignment.tolist() == [0, 0, 1, 2]


def test_all_ones_rows_form_one_cell():
    rng = np.random.default_rng(0)
    ones = np.ones((30, 8))
    mixed = np.tile((rng.random(8) < 0.5).astype(float), (20, 1))
    mixed[:, 0] = 0.0
    P = np.vstack([ones, mixed])[rng.permutation(50)]
    p = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=2))
    all_one = (P == 1).all(axis=1)
    assert p.K == 2
    assert len(set(p.assignment[all_one])) == 1
    assert set(p.assignment[all_one]).isdisjoint(p.assignment[~all_one])


def test_planted_blobs_reach_exhaustive_optimum():
    rng = np.random.default_rng(2)
    for trial in range(3):
        centres = np.array([[0.1, 0.1, 0.1], [0.5, 0.9, 0.5], [0.9, 0.2, 0.8]])
        P = np.clip(np.repeat(centres, 4, axis=0) + rng.uniform(-0.05, 0.05, (12, 3)), 0, 1)
        P = P[rng.permutation(12)]
        part = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=3))
        got = max(cell_diameter(PredictionMatrix(P), part, k) for k in range(3))
        assert got == pytest.approx(best_three_partition(P), abs=1e-15)


def test_uniform_rows_never_beat_exhaustive_optimum():
    # complete linkage is a heuristic: it can exceed the optimum, never undercut it
    rng = np.random.default_rng(9)
    for _ in range(2):
        P = rng.random((12, 3))
        part = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=3))
        got = max(cell_diameter(PredictionMatrix(P), part, k) for k in range(3))
        assert got >= best_three_partition(P) - 1e-15


def check_budget(P, b):
    pm = PredictionMatrix(P)
    part = cluster_finite_class(pm, ClusterSpec(diameter=b))
    cells = [P[part.assignment == k] for k in range(part.K)]
    for k, rows in enumerate(cells):
        d = cheb_diameter(rows)
        assert d == cell_diameter(pm, part, k)
        assert d <= b
    # complete linkage stops only when no two cells can merge within budget
    for a, c in itertools.combinations(range(part.K), 2):
        assert cheb_diameter(np.vstack([cells[a], cells[c]])) > b
    return part


def test_budget_respected_exhaustive_n12():
    rng = np.random.default_rng(4)
    for _ in range(20):
        check_budget(np.round(rng.random((12, 3)), 2), float(rng.uniform(0.05, 0.8)))


def test_infeasible_k():
    pm = PredictionMatrix(np.array([[0.5], [0.5], [0.2]]))
    with pytest.raises(InfeasibleK):
        cluster_finite_class(pm, ClusterSpec(k=3))


def test_exact_k_cells_and_determinism():
    P = np.random.default_rng(1).random((40, 2))
    a = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=5, seed=3))
    b = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=5, seed=3))
    assert a.K == 5 and np.array_equal(a.assignment, b.assignment)
    assert a.provenance == "cluster"


def test_cluster_spec_validation():
    with pytest.raises(BadParam):
        ClusterSpec()
    with pytest.raises(BadParam):
        ClusterSpec(k=2, diameter=0.1)
    with pytest.raises(BadParam):
        ClusterSpec(diameter=-1)
    assert ClusterSpec(k=2).linkage == "complete"


def test_cell_diameter_examples():
    pm = PredictionMatrix(np.array([[0.1], [0.3], [0.9]]))
    part = Partition(np.array([0, 0, 1]), 3)
    assert cell_diameter(pm, part, 1) == 0.0
    assert cell_diameter(pm, part, 0) == pytest.approx(0.2)
    with pytest.raises(EmptyCell):
        cell_diameter(pm, part, 2)


def test_cell_diameter_matches_pairwise():
    rng = np.random.default_rng(8)
    P = rng.random((25, 4))
    part = Partition(np.zeros(25, dtype=int), 1)
    assert cell_diameter(PredictionMatrix(P), part, 0) == cheb_diameter(P)


def test_certify_examples():
    pm = PredictionMatrix(np.array([[0.2], [0.2], [0.7]]))
    assert certify_partition(pm, Partition(np.array([0, 0, 1]), 2)) == [0.0, 0.0]
    pm = PredictionMatrix(np.array([[0.1], [0.5]]))
    assert certify_partition(pm, Partition(np.zeros(2, dtype=int), 1)) == [pytest.approx(0.1)]


def test_certified_alpha_bounds_audit():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(10, 80))
        P = rng.random((n, 3))
        y = rng.random(n) if rng.random() < 0.5 else (rng.random(n) < 0.5).astype(float)
        part = cluster_finite_class(PredictionMatrix(P), ClusterSpec(k=int(rng.integers(1, 5))))
        rep = audit_partition(Dataset(np.zeros((n, 1)), y), PredictionMatrix(P), part)
        cert = certify_partition(PredictionMatrix(P), part)
        for c in rep.per_cell:
            if not c.degenerate:
                assert c.max_abs_cov <= cert[c.cell] + 1e-12


def test_net_single_point():
    assert epsilon_net_partition(np.array([[0.3, 0.3]]), LipschitzSpec(1.0, 0.1)).K == 1


def test_net_three_points():
    p = epsilon_net_partition(np.array([0.0, 0.1, 0.9]), LipschitzSpec(1.0, 0.2))
    assert p.K == 2 and p.assignment.tolist() == [0, 0, 1]
    # no single center covers all three within 0.2
    pts = [0.0, 0.1, 0.9]
    assert all(max(abs(c - q) for q in pts) > 0.2 for c in pts)


@pytest.mark.parametrize("metric", ["euclidean", "chebyshev"])
def test_net_radius_pointwise(metric):
    rng = np.random.default_rng(3)
    X = rng.random((200, 2))
    spec = LipschitzSpec(2.0, 0.15, metric)
    p = epsilon_net_partition(X, spec)
    for i in range(200):
        c = p.centers[p.assignment[i]]
        d = np.abs(X[i] - c).max() if metric == "chebyshev" else np.linalg.norm(X[i] - c)
        assert d <= spec.radius + 1e-15
    assert np.array_equal(assign_to_net(X, p, metric), p.assignment)


def test_net_lipschitz_range():
    rng = np.random.default_rng(6)
    X = rng.random((300, 2))
    L = 3.0
    spec = LipschitzSpec.from_alpha(0.05, L)
    assert spec.radius == pytest.approx(4 * 0.05 / L)
    p = epsilon_net_partition(X, spec)
    for anchor in rng.random((5, 2)):
        f = L * np.linalg.norm(X - anchor, axis=1)
        for k in range(p.K):
            vals = f[p.assignment == k]
            assert np.ptp(vals) <= L * 2 * spec.radius + 1e-12
    assert spec.certified_alpha == pytest.approx(L * spec.radius / 2)


def test_lipschitz_spec_validation():
    with pytest.raises(BadParam):
        LipschitzSpec(0.0, 0.1)
    with pytest.raises(BadParam):
        LipschitzSpec(1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 3), st.integers(0, 10**6), st.floats(0, 1))
def test_budget_property(n, m, seed, b):
    P = np.round(np.random.default_rng(seed).random((n, m)), 1)
    part = cluster_finite_class(PredictionMatrix(P), ClusterSpec(diameter=b))
    assert part.cell_sizes.sum() == n
    assert all(cell_diameter(PredictionMatrix(P), part, k) <= b for k in range(part.K))
