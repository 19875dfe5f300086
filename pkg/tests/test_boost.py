import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indistkit.boost import (BIN_UPPER, BoostConfig, BoostedPredictor, bin_label, bin_of, boost, fit_tree,
                             level_set_audit, level_set_partition, predict, random_tree)
from indistkit.data import Dataset
from indistkit.errors import BadParam, DimensionMismatch, EmptyInput, NoConvergence
from indistkit.synth import SynthSpec, generate


def sse(v):
    return float(((v - v.mean()) ** 2).sum()) if v.size else 0.0


def brute_stump(X, y):
    """Best (feature, threshold) by scanning every midpoint, weighted by unit weights."""
    best = (-1, 0.0, -np.inf)
    base = sse(y)
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            t = (lo + hi) / 2
            left = X[:, f] <= t
            g = base - sse(y[left]) - sse(y[~left])
            if g > best[2] + 1e-12:
                best = (f, t, g)
    return best


def test_bins():
    assert bin_of([0.0, 1e-9, 0.1, 0.1000001, 0.95, 1.0]).tolist() == [0, 1, 1, 2, 10, 10]
    assert bin_label(0) == "{0}" and bin_label(1) == "(0, 0.1]" and bin_label(10) == "(0.9, 1]"
    assert len(BIN_UPPER) == 9


def test_constant_target_single_leaf():
    t = fit_tree(np.random.default_rng(0).random((20, 3)), np.full(20, 0.4))
    assert t.n_nodes == 1 and t.depth == 0
    assert np.allclose(t.predict(np.zeros((3, 3))), 0.4)


def test_xor_depth_two_exact():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0], dtype=float)
    t = fit_tree(X, y, max_depth=2)
    assert np.array_equal(t.predict(X), y)
    assert t.depth <= 2


def test_depth_one_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = np.round(rng.random((100, 3)), 2)
        y = rng.random(100)
        t = fit_tree(X, y, max_depth=1)
        f, thr, _ = brute_stump(X, y)
        assert t.feature[0] == f and t.threshold[0] == pytest.approx(thr)


def test_leaves_clamped_and_depth_bound():
    rng = np.random.default_rng(2)
    X = rng.random((300, 4))
    t = fit_tree(X, rng.random(300), max_depth=5)
    assert t.depth <= 5
    leaves = t.value[t.feature == -1]
    assert ((leaves >= 0) & (leaves <= 1)).all()


def test_fit_tree_errors():
    with pytest.raises(EmptyInput):
        fit_tree(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(BadParam):
        fit_tree(np.zeros((2, 1)), np.zeros(2), max_depth=6)


def test_weighted_leaf_mean():
    X = np.array([[0.0], [0.0]])
    t = fit_tree(X, np.array([0.0, 1.0]), weights=np.array([3.0, 1.0]))
    assert t.predict(X)[0] == pytest.approx(0.25)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 80), st.integers(1, 4), st.integers(0, 5), st.integers(0, 10**6))
def test_tree_structure_property(n, d, depth, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    t = fit_tree(X, rng.random(n), max_depth=depth)
    assert t.depth <= depth
    p = t.predict(rng.random((50, d)))
    assert ((p >= 0) & (p <= 1)).all()


def test_tree_json_round_trip():
    rng = np.random.default_rng(3)
    X = rng.random((100, 2))
    t = fit_tree(X, rng.random(100))
    from indistkit.boost import RegressionTree
    assert np.array_equal(RegressionTree.from_dict(t.to_dict()).predict(X), t.predict(X))


def test_boost_constant_outcome():
    ds = Dataset(np.random.default_rng(0).random((50, 2)), np.full(50, 0.35))
    p = boost(ds, BoostConfig(alpha=0.05))
    assert p.rounds == 0 and p.converged and not p.stages
    assert np.all(p.final_values == 0.35)
    assert level_set_partition(p, ds).K == 1


def tree_data(seed=0, n=2000):
    return generate(SynthSpec("tree_realizable", n=n, d=4, seed=seed)).dataset


def test_boost_realizable_converges_with_small_bin_gains():
    ds = tree_data(1)
    p = boost(ds, BoostConfig(alpha=0.05))
    assert p.converged
    for rec in level_set_audit(p, ds):
        assert rec["improvement"] < 0.05 ** 2


def test_training_mse_non_increasing_over_stages():
    ds = tree_data(2, 1000)
    p = boost(ds, BoostConfig(alpha=0.02))
    h = np.full(ds.n, p.initial)
    prev = np.mean((h - ds.outcome) ** 2)
    for st_ in p.stages:
        rows = bin_of(h) == st_.bin
        h[rows] = st_.tree.predict(ds.features[rows])
        cur = np.mean((h - ds.outcome) ** 2)
        assert cur < prev
        prev = cur


def test_predict_replays_training_values():
    ds = tree_data(3, 800)
    p = boost(ds, BoostConfig(alpha=0.05))
    assert np.array_equal(predict(p, ds.features), p.final_values)
    perm = np.random.default_rng(0).permutation(ds.n)
    assert np.array_equal(p.predict(ds.features[perm]), p.final_values[perm])
    fresh = p.predict(np.random.default_rng(1).random((10_000, 4)))
    assert ((fresh >= 0) & (fresh <= 1)).all()
    with pytest.raises(DimensionMismatch):
        p.predict(np.zeros((2, 3)))


def test_predictor_json_round_trip(tmp_path):
    ds = tree_data(4, 600)
    p = boost(ds, BoostConfig(alpha=0.05))
    p.save(tmp_path / "h.json")
    q = BoostedPredictor.load(tmp_path / "h.json")
    assert np.array_equal(q.predict(ds.features), p.final_values)


def test_no_convergence_warns():
    rng = np.random.default_rng(5)
    ds = Dataset(rng.random((400, 3)), rng.random(400))
    with pytest.warns(NoConvergence):
        p = boost(ds, BoostConfig(alpha=0.001, max_rounds=1))
    assert not p.converged
    assert ((p.final_values >= 0) & (p.final_values <= 1)).all()


def test_level_set_partition_examples():
    class Fixed:
        def __init__(self, h):
            self.h = np.asarray(h)

        def predict(self, X):
            return self.h

    ds = Dataset(np.zeros((3, 1)), np.zeros(3))
    assert level_set_partition(Fixed([0.05, 0.05, 0.05]), ds).labels == (1,)
    part = level_set_partition(Fixed([0.0, 0.05, 0.95]), ds)
    assert part.K == 3 and part.labels == (0, 1, 10)
    assert part.provenance == "boost"


def test_partition_sizes_sum_to_n():
    ds = tree_data(6, 700)
    p = boost(ds, BoostConfig(alpha=0.05))
    other = tree_data(7, 333)
    assert level_set_partition(p, other).cell_sizes.sum() == 333


def test_random_tree_in_class():
    rng = np.random.default_rng(0)
    X = rng.random((50, 3))
    for _ in range(30):
        t = random_tree(rng, X)
        assert t.depth <= 5
        p = t.predict(X)
        assert ((p >= 0) & (p <= 1)).all()


def test_boost_config_validation():
    with pytest.raises(BadParam):
        BoostConfig(alpha=0)
    with pytest.raises(BadParam):
        BoostConfig(max_rounds=0)
