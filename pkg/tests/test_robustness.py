import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from indistkit.data import Dataset, Partition, PredictionMatrix
from indistkit.errors import BadParam, DegenerateCell, EmptyCell, NoAdversarialSubset, ValidationError
from indistkit.expertise import fit_subset_regressors, incorporation_gap
from indistkit.indist import audit_partition
from indistkit.partition import ClusterSpec, cluster_finite_class
from indistkit.robustness import (CompliancePolicy, adversarial_policy, audit_product_class, canonical_predictor,
                                  evaluate_policies, evaluate_under_policy, gen_policy_class, group_gaps)
from indistkit.synth import SynthSpec, generate

from .conftest import cov_oracle


def test_always_policy_zero_alpha_pi():
    r = generate(SynthSpec("side_info", n=300, seed=0))
    part = Partition(r.cells, 3)
    a = audit_product_class(r.dataset, r.preds, [CompliancePolicy.always()], part)
    assert a.alpha_pi == 0.0
    # f·1 = f, so the product audit is the plain audit
    assert a.alpha_prod == pytest.approx(audit_partition(r.dataset, r.preds, part).alpha_hat, abs=1e-15)


def test_product_audit_matches_materialized_column():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = 50
        X = rng.random((n, 2))
        y = rng.random(n)
        f = rng.random(n)
        pol = CompliancePolicy.stump(1, float(X[3, 1]), -1)
        ds = Dataset(X, y)
        a = audit_product_class(ds, PredictionMatrix(f[:, None]), [pol], Partition(np.zeros(n, int), 1))
        pi = (X[:, 1] < X[3, 1]).astype(float)
        assert abs(a.alpha_pi - abs(cov_oracle(y, pi))) < 1e-14
        assert abs(a.alpha_prod - abs(cov_oracle(y, f * pi))) < 1e-14
        assert a.alpha == max(a.alpha_pi, a.alpha_prod)


def test_product_audit_degenerate_cell():
    ds = Dataset(np.zeros((3, 1)), np.array([0.0, 1.0, 1.0]))
    part = Partition(np.array([0, 0, 1]), 2)
    pm = PredictionMatrix(np.zeros((3, 1)))
    with pytest.raises(DegenerateCell):
        audit_product_class(ds, pm, [CompliancePolicy.always()], part)
    a = audit_product_class(ds, pm, [CompliancePolicy.always()], part, strict=False)
    assert a.alpha == 0.0


def test_refinement_never_increases_alpha():
    # a nested chain of partitions ending in singleton-free level sets of x0
    r = generate(SynthSpec("side_info", n=2000, seed=3))
    pols = gen_policy_class("stump", r.dataset.features, 10, seed=3)
    x0 = r.dataset.features[:, 0]
    alphas = []
    for K in (1, 3, 9):
        labels = np.minimum((x0 * K).astype(int), K - 1)
        if K == 9:
            labels = np.minimum((x0 * 3).astype(int), 2) * 3 + np.minimum((r.dataset.features[:, 1] * 3).astype(int), 2)
        alphas.append(audit_product_class(r.dataset, r.preds, pols, Partition.from_labels(labels)).alpha)
    # cells depend on x0 only at K=3, which matches the planted cell rule
    assert alphas[1] <= alphas[0]


def test_canonical_balanced():
    ds = Dataset(np.zeros((4, 1)), np.array([0.0, 1.0, 0.0, 1.0]))
    assert canonical_predictor(ds, Partition(np.zeros(4, int), 1)).means == (0.5,)


def test_canonical_planted_means():
    r = generate(SynthSpec("side_info", n=6000, effect=0.1, seed=4))
    part = Partition(r.cells, 3)
    canon = canonical_predictor(r.dataset, part)
    q = 0.4
    for k, p in enumerate(r.truth["base_rates"]):
        mean = q / 2 + (1 - q) * p
        nk = part.cell_sizes[k]
        assert abs(canon.means[k] - mean) <= 3 * math.sqrt(mean * (1 - mean) / nk)
    assert np.array_equal(canon.predict([0, 2]), [canon.means[0], canon.means[2]])


def test_canonical_equals_constant_kind():
    r = generate(SynthSpec("side_info", n=900, seed=5))
    part = Partition(r.cells, 3)
    regs = fit_subset_regressors(r.dataset, part, "constant")
    assert tuple(g.gamma for g in regs) == canonical_predictor(r.dataset, part).means


def test_canonical_empty_cell():
    ds = Dataset(np.zeros((2, 1)), np.array([0.0, 1.0]))
    with pytest.raises(EmptyCell):
        canonical_predictor(ds, Partition(np.array([0, 0]), 2))


def test_canonical_policy_independent():
    r = generate(SynthSpec("side_info", n=500, seed=6))
    part = Partition(r.cells, 3)
    before = canonical_predictor(r.dataset, part).means
    y = r.dataset.outcome
    for p in gen_policy_class("stump", r.dataset.features, 15, seed=6):
        rep = evaluate_under_policy(r.dataset, r.preds, part, p, 0.01)
        pi = p.mask(r.dataset.features)
        for row in rep.rows:
            if row.vacuous:
                continue
            yc = y[part.mask(row.cell) & pi]
            assert row.lhs == math.fsum((yc - before[row.cell]) ** 2) / yc.size
    assert canonical_predictor(r.dataset, part).means == before


def test_always_policy_matches_omnipredictor_bound():
    for seed in range(20):
        r = generate(SynthSpec("side_info", n=1500, seed=seed))
        part = cluster_finite_class(r.preds, ClusterSpec(k=3))
        alpha = audit_partition(r.dataset, r.preds, part).alpha_hat
        rep = evaluate_under_policy(r.dataset, r.preds, part, CompliancePolicy.always(), alpha)
        regs = fit_subset_regressors(r.dataset, part, "constant")
        gaps = {g.cell: g for g in incorporation_gap(r.dataset, r.preds, part, regs, alpha)}
        for row in rep.rows:
            assert row.p_comply == 1.0 and row.holds
            # canonical MSE is within 2α of each model; 6α slack is looser still
            mse_f = row.rhs - 6 * alpha
            assert row.lhs <= mse_f + 2 * alpha + 1e-12
            assert row.lhs == pytest.approx(gaps[row.cell].mse_reg, abs=1e-15)


def test_low_outcome_compliance_coarse_partition():
    r = generate(SynthSpec("adversarial_groups", n=400, seed=7))
    part = Partition(np.zeros(400, int), 1)
    pol = CompliancePolicy.stump(0, 0.5, -1)   # complies only where E[Y|x] is low
    a = audit_product_class(r.dataset, r.preds, [pol], part).alpha
    assert a > 0.05
    rep = evaluate_under_policy(r.dataset, r.preds, part, pol, a)
    row = rep.rows[0]
    assert row.p_comply == 0.5 and row.holds
    assert row.rhs - row.lhs >= 6 * a / row.p_comply - 0.09 - 0.05


def test_vacuous_cell():
    ds = Dataset(np.array([[0.0], [0.1], [0.9], [1.0]]), np.array([0.0, 1.0, 0.0, 1.0]))
    part = Partition(np.array([0, 0, 1, 1]), 2)
    pm = PredictionMatrix(np.full((4, 2), 0.5))
    rep = evaluate_under_policy(ds, pm, part, CompliancePolicy.stump(0, 0.5), 0.01)
    cell0 = [r for r in rep.rows if r.cell == 0]
    assert len(cell0) == 2 and all(r.vacuous and r.holds is None and r.p_comply == 0.0 for r in cell0)
    assert len(rep.vacuous_rows) == 2 and not rep.violations


def test_parallel_matches_serial():
    r = generate(SynthSpec("side_info", n=800, seed=8))
    part = Partition(r.cells, 3)
    pols = gen_policy_class("tree", r.dataset.features, 12, seed=8)
    a = evaluate_policies(r.dataset, r.preds, part, pols, workers=1)
    b = evaluate_policies(r.dataset, r.preds, part, pols, workers=4)
    assert a.to_dict() == b.to_dict()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_report_invariants(seed):
    r = generate(SynthSpec("side_info", n=300, seed=seed % 1000))
    part = Partition(r.cells, 3)
    pols = gen_policy_class("tree", r.dataset.features, 5, seed=seed)
    rep = evaluate_policies(r.dataset, r.preds, part, pols)
    assert not rep.violations
    for row in rep.rows:
        assert 0.0 <= row.p_comply <= 1.0
        assert row.vacuous == (row.n_comply == 0)


def test_age_stump():
    ages = np.array([[30.0], [64.9], [65.0], [80.0]])
    pol = CompliancePolicy.stump("age", 65, feature_names=("age",))
    assert pol.mask(ages).tolist() == [False, False, True, True]
    with pytest.raises(BadParam):
        CompliancePolicy.stump("height", 1, feature_names=("age",))


def test_gen_policy_class_examples():
    X = np.random.default_rng(9).random((100, 4))
    ones = gen_policy_class("always", X, 1)
    assert len(ones) == 1 and ones[0].mask(X).all()
    a = gen_policy_class("stump", X, 50, seed=3)
    b = gen_policy_class("stump", X, 50, seed=3)
    assert all(np.array_equal(p.mask(X), q.mask(X)) for p, q in zip(a, b))
    assert all(p.threshold in X[:, p.feature] for p in a)
    with pytest.raises(BadParam):
        gen_policy_class("stump", X, 0)


def test_tree_policy_routes_and_roundtrip():
    left = CompliancePolicy.stump(1, 0.5)
    t = CompliancePolicy.tree(0, 0.5, left, CompliancePolicy.always())
    X = np.array([[0.1, 0.9], [0.1, 0.1], [0.9, 0.1]])
    assert t.mask(X).tolist() == [True, False, True]
    assert CompliancePolicy.from_dict(t.to_dict()) == t
    never = CompliancePolicy.never_on_set([[0.1, 0.1]])
    assert never.mask(X).tolist() == [True, False, True]
    assert CompliancePolicy.from_dict(never.to_dict()).mask(X).tolist() == [True, False, True]
    with pytest.raises(BadParam):
        CompliancePolicy.tree(0, 0.5, t, left)


def test_adversarial_two_groups():
    r = generate(SynthSpec("adversarial_groups", n=200, seed=10))
    adv = adversarial_policy(r.dataset, r.preds.preds[:, 0])
    assert adv.group in ((0.0,), (1.0,))
    assert adv.subset.sum() == 100
    assert adv.mse_const < adv.mse_f
    assert adv.gap == pytest.approx((0.5 - adv.constant) ** 2, abs=1e-12)


def test_adversarial_group_means_excluded():
    r = generate(SynthSpec("adversarial_groups", n=200, seed=11))
    x = r.dataset.features[:, 0]
    y = r.dataset.outcome
    f = np.where(x == 1, y[x == 1].mean(), y[x == 0].mean())
    with pytest.raises(NoAdversarialSubset):
        adversarial_policy(r.dataset, f)


def test_adversarial_needs_duplicates():
    ds = Dataset(np.arange(5.0)[:, None] / 7, np.array([0, 1, 1, 1, 1.0]))
    with pytest.raises(ValidationError):
        adversarial_policy(ds, np.full(5, 0.5))
    quant = adversarial_policy(ds, np.full(5, 0.5), decimals=0)
    assert quant.subset.sum() == 4 and quant.constant == 0.75


def test_adversarial_matches_exhaustive_scan():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        X = rng.integers(0, 3, (n, 2)).astype(float)
        y = rng.random(n)
        f = rng.random(n)
        best = -np.inf
        for key in {tuple(r) for r in X}:
            m = (X == key).all(axis=1)
            if m.sum() < 2:
                continue
            c = y[m].mean()
            best = max(best, np.mean((y[m] - f[m]) ** 2) - np.mean((y[m] - c) ** 2))
        ds = Dataset(X, y)
        if best <= 1e-12:
            with pytest.raises((NoAdversarialSubset, ValidationError)):
                adversarial_policy(ds, f)
            continue
        adv = adversarial_policy(ds, f)
        assert abs(adv.gap - best) < 1e-12 and adv.mse_const < adv.mse_f


def test_group_gaps_skips_singletons():
    X = np.array([[0.0], [0.0], [1.0]])
    g = group_gaps(X, np.array([0.0, 1.0, 1.0]), np.zeros(3))
    assert len(g) == 1 and g[0][0] == (0.0,)
