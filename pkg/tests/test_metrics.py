import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdfn.metrics import (EvalReport, UndefinedAUCError, auc_score, dice, iou, kfold_split,
                          mean_auc, paired_t_test, per_class_auc, roc_auc, roc_curve,
                          grouped_holdout, write_roc_csv)
from sdfn.oracles import pair_count_auc, t_two_tailed_quadrature

# SDFN column of the published per-class table, canonical order
TABLE_SDFN = [0.781, 0.885, 0.832, 0.700, 0.815, 0.765, 0.719, 0.866, 0.743, 0.842,
              0.921, 0.835, 0.791, 0.911]


def _overlap_pair(overlap):
    x = np.zeros(400, bool)
    y = np.zeros(400, bool)
    x[:100] = True
    y[100 - overlap:200 - overlap] = True
    return x, y


def test_dice_closed_forms():
    x, y = _overlap_pair(50)
    assert dice(x, y) == 0.5
    assert abs(iou(x, y) - 1 / 3) < 1e-15
    assert dice(x, x) == 1.0 and iou(x, x) == 1.0
    assert dice(*_overlap_pair(0)) == 0.0
    empty = np.zeros((3, 3), bool)
    assert dice(empty, empty) == 1.0 and iou(empty, empty) == 1.0


def test_overlap_extent_mismatch():
    with pytest.raises(ValueError):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))


def test_dsc_iou_identity_random():
    rng = np.random.default_rng(3)
    for _ in range(300):
        shape = tuple(rng.integers(1, 20, size=2))
        x = rng.random(shape) < rng.random()
        y = rng.random(shape) < rng.random()
        j = iou(x, y)
        assert abs(dice(x, y) - 2 * j / (1 + j)) < 1e-12


def test_auc_trivial_cases():
    assert auc_score([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc_score([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(UndefinedAUCError):
        auc_score([0.1, 0.2], [1, 1])


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(11)
    for i in range(50):
        n = int(rng.integers(2, 201))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        assert abs(auc_score(scores, labels) - pair_count_auc(scores, labels)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_roc_curve_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 80))
    scores = np.round(rng.standard_normal(n), 1)
    labels = rng.integers(0, 2, n)
    labels[:2] = (0, 1)
    curve, auc = roc_auc(scores, labels)
    assert curve.fpr[0] == 0 and curve.tpr[0] == 0
    assert curve.fpr[-1] == 1 and curve.tpr[-1] == 1
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert abs(curve.trapezoid_area() - auc) < 1e-9
    # monotone transform invariance
    assert auc_score(np.exp(scores), labels) == auc
    # complement for tie-free scores
    free = rng.permutation(n).astype(float)
    assert abs(auc_score(free, labels) + auc_score(-free, labels) - 1) < 1e-12


def test_mean_auc_and_table_column():
    assert mean_auc([0.5] * 14) == 0.5
    assert abs(mean_auc(TABLE_SDFN) - 0.815) <= 0.0005
    v = np.random.default_rng(0).random(14)
    assert abs(mean_auc(v) - v.mean()) < 1e-15
    with pytest.raises(ValueError):
        mean_auc([0.5] * 13)


def test_per_class_auc_undefined():
    probs = np.random.default_rng(0).random((6, 2))
    labels = np.array([[0, 1], [1, 1], [0, 1], [1, 1], [0, 1], [1, 1]])
    with pytest.raises(UndefinedAUCError):
        per_class_auc(probs, labels)
    out = per_class_auc(probs, labels, skip_undefined=True)
    assert np.isnan(out[1]) and np.isfinite(out[0])


def test_t_test_trivial():
    r = paired_t_test([1, 2, 3], [1, 2, 3])
    assert (r.t, r.p) == (0.0, 1.0)
    t, p = paired_t_test([1, -1, 1, -1], [0, 0, 0, 0])
    assert t == 0.0 and p == 1.0
    r = paired_t_test([2, 3, 4], [1, 2, 3])
    assert r.p == 0.0 and r.degenerate
    with pytest.raises(ValueError):
        paired_t_test([1], [2])
    with pytest.raises(ValueError):
        paired_t_test([1, 2], [2, 3, 4])


@pytest.mark.parametrize("n", [5, 14, 30])
def test_t_test_matches_quadrature(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        a = rng.random(n)
        b = a + rng.normal(rng.normal(0, 0.05), 0.1, n)
        t, p = paired_t_test(a, b)
        assert abs(p - t_two_tailed_quadrature(t, n - 1)) < 1e-8


def test_t_test_symmetry():
    rng = np.random.default_rng(2)
    a, b = rng.random(14), rng.random(14)
    r1, r2 = paired_t_test(a, b), paired_t_test(b, a)
    assert r1.t == -r2.t and r1.p == r2.p


def test_kfold_singletons():
    ids = list(range(250))
    folds = kfold_split(ids, ids, 5, seed=0)
    assert [len(f) for f in folds] == [50] * 5
    assert sorted(sum(folds, [])) == ids


def test_kfold_grouped_membership():
    rng = np.random.default_rng(5)
    ids = [f"i{i}" for i in range(500)]
    groups = [f"g{g}" for g in rng.integers(0, 100, 500)]
    folds = kfold_split(ids, groups, 5, seed=9)
    owner = {}
    for f, members in enumerate(folds):
        for item in members:
            assert item not in owner
            owner[item] = f
    assert set(owner) == set(ids)
    group_of = dict(zip(ids, groups))
    fold_of_group = {}
    for item, f in owner.items():
        assert fold_of_group.setdefault(group_of[item], f) == f
    sizes = [len(f) for f in folds]
    largest = max(groups.count(g) for g in set(groups))
    assert max(sizes) - min(sizes) <= largest
    assert folds == kfold_split(ids, groups, 5, seed=9)


def test_kfold_errors():
    with pytest.raises(ValueError):
        kfold_split([1, 2, 3], ["a", "a", "b"], 3, 0)
    with pytest.raises(ValueError):
        kfold_split([1, 2], [1, 2], 1, 0)


def test_grouped_holdout_disjoint():
    groups = [i // 3 for i in range(300)]
    kept, held = grouped_holdout(range(300), groups, 0.1, seed=1)
    assert len(held) == 30
    assert not {groups[i] for i in kept} & {groups[i] for i in held}


def test_report_serialisation(tmp_path):
    rng = np.random.default_rng(0)
    per = {"global": list(rng.random(14)), "sdfn": list(rng.random(14))}
    rep = EvalReport(["global", "sdfn"], per)
    assert abs(rep.mean["sdfn"] - np.mean(per["sdfn"])) < 1e-12
    rep.to_csv(tmp_path / "r.csv")
    rep.to_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "pathology,global,sdfn" and lines[1].startswith("atelectasis")
    assert lines[-1].startswith("mean") and len(lines) == 16
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["per_class_auc"]["sdfn"] == per["sdfn"]
    curve = roc_curve([0.1, 0.4, 0.4, 0.9], [0, 1, 0, 1])
    write_roc_csv(tmp_path / "roc.csv", {"nodule": curve})
    rows = (tmp_path / "roc.csv").read_text().splitlines()
    assert rows[0] == "pathology,threshold,fpr,tpr" and len(rows) == 1 + len(curve.fpr)
    assert math.isinf(float(rows[1].split(",")[1]))
