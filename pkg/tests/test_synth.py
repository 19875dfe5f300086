import json
import math

import numpy as np
import pytest

from indistkit.data import ColumnSchema, Partition, load_dataset, read_header
from indistkit.errors import BadSpec
from indistkit.expertise import expert_test
from indistkit.indist import audit_partition
from indistkit.synth import GENERATORS, SynthSpec, generate, spec_from_dict, tree_mean


@pytest.mark.parametrize("gen", GENERATORS)
def test_fixed_seed_identical_bytes(gen, tmp_path):
    spec = SynthSpec(gen, n=300, d=6, seed=4)
    a = generate(spec).save(tmp_path / "a")
    b = generate(spec).save(tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read()
    other = generate(SynthSpec(gen, n=300, d=6, seed=5)).save(tmp_path / "c")
    assert open(a["data"], "rb").read() != open(other["data"], "rb").read()
    header = read_header(a["data"])
    feats = [h for h in header if h.startswith("x")]
    expert = "yhat" if "yhat" in header else None
    ds = load_dataset(a["data"], ColumnSchema(feats, "y", expert, row_id="row_id"))
    assert np.array_equal(ds.features, generate(spec).dataset.features)
    assert ds.n == 300 and ((ds.outcome >= 0) & (ds.outcome <= 1)).all()


def test_side_info_null_no_flags():
    for seed in range(50):
        r = generate(SynthSpec("side_info", n=2000, effect=0.0, seed=seed))
        part = Partition(r.cells, 3)
        for c in expert_test(r.dataset, part, 0.0).per_cell:
            y = r.dataset.outcome[part.mask(c.cell)]
            yh = r.dataset.expert[part.mask(c.cell)]
            sigma = math.sqrt(y.var() * yh.var() / y.size)
            assert abs(c.cov) <= 3 * sigma


def test_side_info_plant_recovered():
    r = generate(SynthSpec("side_info", n=5000, effect=0.15, seed=1))
    part = Partition(r.cells, 3)
    assert r.truth["planted_cov"] == 0.15
    for c in expert_test(r.dataset, part, 0.0).per_cell:
        m = part.mask(c.cell)
        y, yh = r.dataset.outcome[m], r.dataset.expert[m]
        sigma = np.std((y - y.mean()) * (yh - yh.mean())) / math.sqrt(m.sum())
        assert abs(c.cov - 0.15) <= 3 * sigma


def test_features_hide_side_information():
    r = generate(SynthSpec("side_info", n=5000, effect=0.2, seed=2))
    a = audit_partition(r.dataset, r.preds, Partition(r.cells, 3))
    assert a.alpha_hat < 0.01


def test_tree_realizable_truth():
    r = generate(SynthSpec("tree_realizable", n=2000, d=3, noise=0.0, seed=3))
    assert np.array_equal(r.dataset.outcome, tree_mean(r.dataset.features))
    assert set(np.unique(r.dataset.outcome)) <= set(r.truth["leaf_values"])


def test_sufficiency_structure():
    r = generate(SynthSpec("sufficiency", n=20_000, d=6, m=5, effect=0.2, seed=4))
    f0 = r.preds.preds[:, 0]
    assert set(np.unique(r.preds.preds)) == {0.0, 1.0}
    for v, p in ((0.0, 0.3), (1.0, 0.7)):
        yh = r.dataset.expert[f0 == v]
        assert abs(yh.mean() - p) <= 3 * math.sqrt(p * (1 - p) / yh.size)


def test_adversarial_groups_balanced():
    r = generate(SynthSpec("adversarial_groups", n=200, seed=5))
    x = r.dataset.features[:, 0]
    assert (x == 0).sum() == (x == 1).sum() == 100
    assert (r.preds.preds == 0.5).all()
    assert r.truth["expected_gap"] == pytest.approx(0.09)


def test_bad_specs():
    for kw in [dict(generator="nope"), dict(generator="side_info", effect=0.5),
               dict(generator="tree_realizable", d=2), dict(generator="sufficiency", d=3, m=5),
               dict(generator="side_info", n=1)]:
        with pytest.raises(BadSpec):
            SynthSpec(**kw)
    with pytest.raises(BadSpec):
        spec_from_dict({"generator": "side_info", "colour": 1})


def test_spec_from_dict_seed_default():
    s = spec_from_dict({"generator": "side_info"}, seed=9)
    assert s.seed == 9
    assert spec_from_dict({"generator": "side_info", "seed": 2}, seed=9).seed == 2


def test_no_expert_option(tmp_path):
    r = generate(SynthSpec("side_info", n=50, expert=False))
    assert r.dataset.expert is None
    paths = r.save(tmp_path)
    assert json.loads(open(paths["truth"]).read())["generator"] == "side_info"
