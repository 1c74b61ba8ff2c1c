import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pssf.errors import DataError, MetricUndefinedError, SchemaError, SplitError, TrainingError
from pssf.ml.linear import class_weights, data_loss, fit_logreg_l2, l1_select, l2_objective, probabilities
from pssf.ml.metrics import auc, balanced_accuracy, compute_metrics, confusion_matrix, macro_f1
from pssf.ml.models import TrainedModel
from pssf.ml.mrmr import mrmr_rank, mutual_information, equal_frequency_bins
from pssf.ml.pipeline import (
    MLConfig,
    fit_with_selection,
    task_labels,
    train_gradient_boosting,
    train_logreg_l2,
    train_random_forest,
)
from pssf.ml.split import split_subjects
from pssf.ml.trees import BoostingConfig, ForestConfig, Tree, fit_gradient_boosting

# ------------------------------------------------------------ AUC


def test_auc_matches_pairwise_on_random_instances():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
        assert auc(y, s) == pytest.approx(oracles.pairwise_auc(y, s), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(-5, 5)), min_size=2, max_size=60))
def test_auc_property(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], dtype=float)
    if y.min() == y.max():
        with pytest.raises(MetricUndefinedError):
            auc(y, s)
        return
    a = auc(y, s)
    assert a == pytest.approx(oracles.pairwise_auc(y, s), abs=1e-12)
    assert auc(y, np.exp(s / 3.0) + 7) == pytest.approx(a, abs=1e-12)  # monotone transform


def test_auc_examples():
    assert auc([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4]) == 1.0
    assert auc([0, 1, 0, 1], [0.5] * 4) == 0.5
    assert auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75


def test_confusion_and_derived_metrics():
    y = np.array([0, 0, 1, 1, 2, 2])
    p = np.array([0, 1, 1, 1, 0, 2])
    cm = confusion_matrix(y, p, 3)
    assert cm.sum(axis=1).tolist() == [2, 2, 2]
    assert balanced_accuracy(cm) == pytest.approx((0.5 + 1 + 0.5) / 3)
    f1 = [2 * 1 / (2 + 1 + 1), 2 * 2 / (4 + 1 + 0), 2 * 1 / (2 + 0 + 1)]
    assert macro_f1(cm) == pytest.approx(np.mean(f1))
    # class never predicted nor present: 0/0 -> 0
    assert macro_f1(confusion_matrix([0, 0], [0, 0], 2)) == pytest.approx(0.5)


def test_compute_metrics_three_class_and_ties():
    y = np.array([0, 1, 2, 0, 1, 2])
    prob = np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.1, 0.2, 0.7], [0.4, 0.4, 0.2], [0.5, 0.3, 0.2], [0.3, 0.3, 0.4]])
    m = compute_metrics(y, prob, 3)
    ovr = [oracles.pairwise_auc((y == c).astype(int), prob[:, c]) for c in range(3)]
    assert m["auc"] == pytest.approx(np.mean(ovr))
    assert m["confusion_matrix"][0] == [2, 0, 0]  # tie (0.4, 0.4) goes to the lower class
    for k in ("auc", "balanced_accuracy", "macro_f1"):
        assert 0.0 <= m[k] <= 1.0


def test_single_class_auc_undefined_but_others_computed():
    m = compute_metrics([1, 1, 1], np.array([[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]]), 2)
    assert m["auc"] is None
    assert m["balanced_accuracy"] == pytest.approx(2 / 3)


# ------------------------------------------------------------ logistic losses


def _fd_check(theta, A, y, w, fn):
    _, g = fn(theta)
    h = 1e-5
    num = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        e = np.zeros_like(theta)
        e[idx] = h
        num[idx] = (fn(theta + e)[0] - fn(theta - e)[0]) / (2 * h)
    rel = np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-12)
    assert rel < 1e-4


@pytest.mark.parametrize("k", [1, 3])
def test_gradients_match_finite_differences(k):
    rng = np.random.default_rng(k)
    for _ in range(20):
        n, p = int(rng.integers(5, 40)), int(rng.integers(1, 6))
        A = np.hstack([np.ones((n, 1)), rng.normal(size=(n, p))])
        y = rng.integers(0, 2 if k == 1 else 3, n)
        w = rng.uniform(0.2, 3.0, n)
        theta = rng.normal(size=(p + 1, k))
        _fd_check(theta, A, y, w, lambda t: data_loss(t, A, y, w))
        _fd_check(theta, A, y, w, lambda t: l2_objective(t, A, y, w, 0.3))


def test_logreg_separable_toy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    theta, info = fit_logreg_l2(X, y, 1e-3, 2)
    pred = probabilities(theta, X).argmax(axis=1)
    assert np.mean(pred == y) == 1.0
    three = (X[:, 0] > 0).astype(int) + (X[:, 0] > 1).astype(int)
    theta3, _ = fit_logreg_l2(X, three, 1e-4, 3)
    p3 = probabilities(theta3, X)
    assert np.allclose(p3.sum(axis=1), 1.0, atol=1e-12)


def test_zero_coefficients_give_uniform():
    p = probabilities(np.zeros((4, 3)), np.random.default_rng(0).normal(size=(5, 3)))
    assert np.allclose(p, 1 / 3)
    p2 = probabilities(np.zeros((4, 1)), np.ones((2, 3)))
    assert np.allclose(p2, 0.5)


def test_class_weights_and_errors():
    w = class_weights(np.array([0, 0, 0, 1]), 2)
    assert w.tolist() == [4 / 6, 4 / 6, 4 / 6, 2.0]
    with pytest.raises(TrainingError):
        class_weights(np.zeros(5, int), 2)
    with pytest.raises(DataError):
        fit_logreg_l2(np.array([[np.nan], [1.0]]), np.array([0, 1]), 0.1, 2)


# ------------------------------------------------------------ L1 selection


def test_l1_extremes():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(100, 4))
    y = (X[:, 0] + rng.normal(scale=0.5, size=100) > 0).astype(int)
    assert l1_select(X, y, 1e3, list("abcd"), 2) == []
    assert l1_select(X, y, 0.0, list("abcd"), 2) == list("abcd")


def test_l1_picks_the_label_feature():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 200)
    X = np.column_stack([y + rng.normal(scale=0.1, size=200), rng.normal(size=200)])
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    hits = [lam for lam in (0.02, 0.05, 0.1, 0.2) if l1_select(X, y, lam, ["signal", "noise"], 2) == ["signal"]]
    assert hits  # some moderate lambda isolates the informative feature
    assert l1_select(X, y, 0.1, ["signal", "noise"], 2) == ["signal"]


# ------------------------------------------------------------ mRMR


def test_mrmr_label_copy_first():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 300)
    X = np.column_stack([rng.normal(size=300), y + 0.0, rng.normal(size=300)])
    assert mrmr_rank(X, y, 3)[0] == 1


def test_mrmr_duplicate_never_second():
    rng = np.random.default_rng(4)
    for trial in range(10):
        n = 400
        y = rng.integers(0, 2, n)
        inf = y + rng.normal(scale=0.6, size=n)
        weak = [y * 0.3 + rng.normal(size=n) for _ in range(3)]
        X = np.column_stack([inf, inf.copy()] + weak)
        order = mrmr_rank(X, y, 5)
        assert order[0] in (0, 1)
        assert order[1] not in (0, 1)


def test_mrmr_clamps_k(caplog):
    X = np.random.default_rng(0).normal(size=(50, 2))
    with caplog.at_level(logging.WARNING):
        r = mrmr_rank(X, np.arange(50) % 2, 5)
    assert len(r) == 2 and "clamped" in caplog.text


def test_mrmr_null_is_reproducible():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 5))
    y = rng.integers(0, 2, 300)
    rel = [mutual_information(equal_frequency_bins(X[:, j]), y) for j in range(5)]
    # permutation null for the largest estimated MI
    null = [mutual_information(equal_frequency_bins(X[:, 0]), rng.permutation(y)) for _ in range(200)]
    assert max(rel) < np.quantile(null, 0.999) + 0.02
    assert mrmr_rank(X, y, 5) == mrmr_rank(X.copy(), y.copy(), 5)
    assert mrmr_rank(X, y, 1) == [int(np.argmax(rel))]


# ------------------------------------------------------------ trees


def test_forest_on_threshold_rule():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(500, 4))
    y = (X[:, 0] > 0).astype(int)
    Xt = rng.normal(size=(500, 4))
    m = train_random_forest(X, y, ForestConfig(n_trees=30), "binary_0v2", list("abcd"), seed=1)
    acc = np.mean(m.predict_proba(Xt).argmax(axis=1) == (Xt[:, 0] > 0))
    assert acc >= 0.95


def test_forest_of_constant_leaves():
    t = Tree()
    t.add([0.7, 0.3])
    m = TrainedModel("random_forest", "binary_0v2", ["a"], {"trees": [t.to_dict()] * 5})
    assert np.allclose(m.predict_proba(np.random.default_rng(0).normal(size=(4, 1))), [0.7, 0.3])


def test_single_stump_importance():
    t = Tree()
    root = t.add([0.5, 0.5])
    t.feature[root], t.threshold[root], t.gain[root] = 2, 0.0, 3.5
    t.left[root] = t.add([1.0, 0.0])
    t.right[root] = t.add([0.0, 1.0])
    m = TrainedModel("random_forest", "binary_0v2", list("abc"), {"trees": [t.to_dict()]})
    assert m.importance()[0] == ("c", 1.0)


def test_boosting_stump_matches_exhaustive_oracle():
    rng = np.random.default_rng(8)
    X = np.round(rng.normal(size=(60, 3)), 2)
    y = ((X[:, 1] > 0.2) ^ (rng.random(60) < 0.1)).astype(int)
    cfg = BoostingConfig(n_rounds=1, max_depth=1, learning_rate=1.0)
    init, stages = fit_gradient_boosting(X, y, 2, cfg)
    tree = stages[0][0]
    p0 = y.mean()
    assert init[0] == pytest.approx(np.log(p0 / (1 - p0)))
    r = y - p0
    sse, j, thr = oracles.best_stump_sse(X.tolist(), r.tolist(), [1.0] * 60)
    assert tree.feature[0] == j and tree.threshold[0] == pytest.approx(thr)
    left = X[:, j] <= thr
    for side, node in ((left, tree.left[0]), (~left, tree.right[0])):
        leaf = r[side].sum() / (side.sum() * p0 * (1 - p0))
        assert tree.value[node][0] == pytest.approx(leaf)


def test_boosting_zero_score_is_half():
    t = Tree()
    t.add([0.0])
    m = TrainedModel("gradient_boosting", "binary_0v2", ["a"], {"init": [0.0], "stages": [[t.to_dict()]]})
    assert np.allclose(m.predict_proba(np.zeros((3, 1))), 0.5)
    m2 = TrainedModel("gradient_boosting", "binary_0v2", ["a"], {"init": [1.3], "stages": []})
    assert m2.predict_proba(np.zeros((1, 1)))[0, 1] == pytest.approx(1 / (1 + np.exp(-1.3)))


def test_second_order_variant_trains():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] > 0).astype(int) + (X[:, 0] > 0.8).astype(int)
    m = train_gradient_boosting(X, y, BoostingConfig(n_rounds=20, second_order=True), "three_class", list("abc"))
    p = m.predict_proba(X)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.mean(p.argmax(axis=1) == y) > 0.9


def test_single_class_training_fails():
    X = np.zeros((5, 2))
    with pytest.raises(TrainingError):
        train_random_forest(X, np.zeros(5, int), ForestConfig(n_trees=2), "binary_0v2", ["a", "b"], 0)
    with pytest.raises(TrainingError):
        train_gradient_boosting(X, np.zeros(5, int), BoostingConfig(n_rounds=2), "binary_0v2", ["a", "b"])


# ------------------------------------------------------------ models


def _toy(n=300, seed=10):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    y = (X[:, 0] + X[:, 1] > 0).astype(int)
    return X, y


@pytest.mark.parametrize("kind", ["logreg_l2", "random_forest", "gradient_boosting"])
def test_models_round_trip_and_active_set(tmp_path, kind):
    X, y = _toy()
    names = [f"f{i}" for i in range(5)]
    if kind == "logreg_l2":
        m = train_logreg_l2(X, y, 0.01, "binary_0v2", names, 3)
    elif kind == "random_forest":
        m = train_random_forest(X, y, ForestConfig(n_trees=40), "binary_0v2", names, 3)
    else:
        m = train_gradient_boosting(X, y, BoostingConfig(n_rounds=40), "binary_0v2", names, 3)
    p = m.predict_proba(X)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9) and p.min() >= 0 and p.max() <= 1
    assert {f for f, _ in m.importance()[:2]} == {"f0", "f1"}
    if kind != "logreg_l2":
        assert sum(s for _, s in m.importance()) == pytest.approx(1.0, abs=1e-9)
    m.save(tmp_path / "m.json")
    back = TrainedModel.load(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(X), p)
    m.save(tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    # named columns in another order select correctly
    perm = [4, 2, 0, 1, 3]
    assert np.allclose(m.predict_proba(X[:, perm], [names[i] for i in perm]), p, rtol=0, atol=1e-12)
    with pytest.raises(SchemaError):
        m.predict_proba(X[:, :3], names[:3])


def test_logreg_importance_is_absolute_coefficient():
    m = TrainedModel("logreg_l2", "binary_0v2", ["a", "b", "c"], {"theta": [[0.1], [0.0], [2.0], [-3.0]]},
                     {"mean": [0, 0, 0], "std": [1, 1, 1]})
    assert [f for f, _ in m.importance()] == ["c", "b", "a"]


def test_fit_with_selection_logs_search():
    X, y = _toy(200)
    Xv, yv = _toy(80, seed=11)
    names = [f"f{i}" for i in range(5)]
    cfg = MLConfig(k_grid=(2, 4), l1_grid=(0.01,), l2_grid=(0.01, 0.1))
    m = fit_with_selection(X, y, Xv, yv, names, "logreg_l2", "binary_0v2", cfg, seed=0)
    assert set(m.features) >= {"f0", "f1"}
    assert len(m.config["search"]) >= 2


def test_task_labels():
    mask, y = task_labels([0, 1, 2, 2, 0], "binary_0v2")
    assert mask.tolist() == [True, False, True, True, True] and y.tolist() == [0, 1, 1, 0]
    with pytest.raises(TrainingError):
        task_labels([0], "bogus")


# ------------------------------------------------------------ split


def test_split_sizes_and_determinism():
    ids = [f"S{i:03d}" for i in range(1, 181)]
    plan = split_subjects(ids + ids[:10], seed=0)
    assert [len(plan.subjects(f)) for f in ("train", "val", "test")] == [126, 27, 27]
    assert plan == split_subjects(list(reversed(ids)), seed=0)
    assert plan != split_subjects(ids, seed=1)


def test_split_errors():
    with pytest.raises(SplitError):
        split_subjects(["a", "b"])
    with pytest.raises(SplitError):
        split_subjects(["a", "b", "c"], fractions=(0.5, 0.5, 0.5))


@given(st.integers(3, 400), st.integers(0, 10**6))
def test_split_within_two_subjects(n, seed):
    plan = split_subjects([f"s{i}" for i in range(n)], seed=seed)
    for f, frac in zip(("train", "val", "test"), (0.7, 0.15, 0.15)):
        assert abs(len(plan.subjects(f)) - frac * n) <= 2
