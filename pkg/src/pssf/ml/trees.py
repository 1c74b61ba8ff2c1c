"""CART trees, bagged forests and Friedman gradient boosting.

Trees are stored as flat node arrays: ``feature`` (-1 at leaves),
``threshold`` (go left when ``x <= threshold``), ``left``/``right`` child
indices, ``value`` (leaf payload) and ``gain`` (weighted impurity decrease of
the split, for importances).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from ..seeding import substream


@dataclass
class Tree:
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    value: list = field(default_factory=list)
    gain: list = field(default_factory=list)

    def add(self, value) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append([float(v) for v in np.atleast_1d(value)])
        self.gain.append(0.0)
        return len(self.feature) - 1

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index per row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=int)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        active = feat[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, feat[n]] <= thr[n]
            node[idx] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.value, dtype=np.float64)[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: list(v) for k, v in d.items()})


def _best_split(x, stat, w, cnt, min_leaf, impurity):
    """Best threshold on one feature.

    ``stat`` is an (n, m) array of per-sample additive statistics from which
    ``impurity(sums, weight)`` returns the weighted node impurity.  Returns
    ``(decrease, threshold)`` or ``(-inf, None)``.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cs = np.cumsum(stat[order], axis=0)
    cw = np.cumsum(w[order])
    cc = np.cumsum(cnt[order])
    total_s, total_w, total_c = cs[-1], cw[-1], cc[-1]
    # candidate cut after position i (0-based) where the value changes
    i = np.flatnonzero((xs[1:] > xs[:-1]) & (cc[:-1] >= min_leaf) & (total_c - cc[:-1] >= min_leaf))
    if i.size == 0:
        return -np.inf, None
    parent = impurity(total_s[None, :], np.array([total_w]))[0]
    child = impurity(cs[i], cw[i]) + impurity(total_s - cs[i], total_w - cw[i])
    dec = parent - child
    b = int(np.argmax(dec))
    return float(dec[b]), float((xs[i[b]] + xs[i[b] + 1]) / 2)


def _gini(sums, weight):
    """Weighted Gini impurity times node weight; ``sums`` are class weights."""
    weight = np.maximum(weight, 1e-300)
    return weight - np.sum(sums * sums, axis=1) / weight


def _sse(sums, weight):
    """Weighted squared error about the weighted mean; sums = (w*r, w*r^2)."""
    weight = np.maximum(weight, 1e-300)
    return sums[:, 1] - sums[:, 0] ** 2 / weight


def grow_tree(X, stat, w, leaf_value, impurity, max_depth, min_leaf, rng=None, max_features=None, cnt=None) -> Tree:
    """Depth-first CART growth; nodes are numbered in creation order."""
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    cnt = np.ones(n) if cnt is None else cnt
    tree = Tree()

    def build(idx, depth):
        node = tree.add(leaf_value(idx))
        if depth >= max_depth or cnt[idx].sum() < 2 * min_leaf:
            return node
        feats = np.arange(p) if max_features is None else np.sort(rng.choice(p, size=max_features, replace=False))
        best = (1e-12, None, None)
        for j in feats:
            dec, thr = _best_split(X[idx, j], stat[idx], w[idx], cnt[idx], min_leaf, impurity)
            if dec > best[0]:
                best = (dec, int(j), thr)
        if best[1] is None:
            return node
        dec, j, thr = best
        mask = X[idx, j] <= thr
        tree.feature[node] = j
        tree.threshold[node] = thr
        tree.gain[node] = dec
        tree.left[node] = build(idx[mask], depth + 1)
        tree.right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(n), 0)
    return tree


def _require_classes(y, n_classes):
    if np.unique(y).size < 2:
        raise TrainingError("training labels contain a single class")
    if y.min() < 0 or y.max() >= n_classes:
        raise TrainingError("labels outside [0, n_classes)")


@dataclass
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 12
    min_leaf: int = 2


def fit_random_forest(X, y, n_classes: int, cfg: ForestConfig, seed: int, weights=None) -> list:
    """Bootstrap-bagged Gini trees, floor(sqrt(p)) candidate features per split.

    Tree ``t`` draws from its own substream (seed, "tree", t), so the forest
    does not depend on training order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    _require_classes(y, n_classes)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    mtry = max(1, int(np.floor(np.sqrt(p))))
    onehot = np.eye(n_classes)[y]
    trees = []
    for t in range(cfg.n_trees):
        rng = substream(seed, "tree", t)
        boot = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
        keep = np.flatnonzero(boot > 0)
        cnt = boot[keep]
        wk = w[keep] * cnt
        stat = onehot[keep] * wk[:, None]

        def leaf(idx, stat=stat):
            s = stat[idx].sum(axis=0)
            return s / s.sum()

        trees.append(grow_tree(X[keep], stat, wk, leaf, _gini, cfg.max_depth, cfg.min_leaf, rng, mtry, cnt))
    return trees


def forest_proba(trees, X) -> np.ndarray:
    return np.mean([t.predict(X) for t in trees], axis=0)


@dataclass
class BoostingConfig:
    n_rounds: int = 150
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 1
    second_order: bool = False


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def boosting_init(y, n_classes, w) -> np.ndarray:
    """Weighted log-odds (binary) or log-prior (softmax) starting scores."""
    prior = np.array([w[y == c].sum() for c in range(n_classes)]) / w.sum()
    prior = np.clip(prior, 1e-12, 1.0)
    if n_classes == 2:
        return np.array([np.log(prior[1] / prior[0])])
    return np.log(prior)


def _fit_stage_tree(X, r, hess, w, cfg: BoostingConfig, newton_scale: float) -> Tree:
    """Least-squares tree on residuals ``r``, then Newton leaf values.

    First order: split on weighted SSE of ``r``; leaf = scale * sum(w r) / sum(w h).
    Second order: split on SSE of ``r / h`` with weights ``w h`` (the
    Newton-boosting gain), same leaf formula.
    """
    if cfg.second_order:
        target = r / np.maximum(hess, 1e-12)
        sw = w * hess
    else:
        target = r
        sw = w
    stat = np.column_stack([sw * target, sw * target * target])
    num = w * r
    den = w * hess

    def leaf(idx):
        d = den[idx].sum()
        return newton_scale * num[idx].sum() / d if d > 1e-300 else 0.0

    return grow_tree(X, stat, sw, leaf, _sse, cfg.max_depth, cfg.min_leaf)


def fit_gradient_boosting(X, y, n_classes: int, cfg: BoostingConfig, weights=None):
    """Friedman boosting on the logistic (binary) or softmax loss.

    Returns ``(init_scores, stages)`` where each stage is a list of trees (one
    for binary, one per class otherwise).  Tree leaf values already include
    the learning rate.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    _require_classes(y, n_classes)
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    init = boosting_init(y, n_classes, w)
    F = np.tile(init, (y.size, 1))
    onehot = np.eye(n_classes)[y]
    stages = []
    for _ in range(cfg.n_rounds):
        if n_classes == 2:
            p = _sigmoid(F[:, 0])
            r = y - p
            tree = _fit_stage_tree(X, r, p * (1 - p), w, cfg, 1.0)
            _scale_leaves(tree, cfg.learning_rate)
            F[:, 0] += tree.predict(X)[:, 0]
            stages.append([tree])
        else:
            P = _softmax(F)
            trees = []
            for c in range(n_classes):
                r = onehot[:, c] - P[:, c]
                h = np.abs(r) * (1 - np.abs(r))
                tree = _fit_stage_tree(X, r, h, w, cfg, (n_classes - 1) / n_classes)
                _scale_leaves(tree, cfg.learning_rate)
                trees.append(tree)
            for c, tree in enumerate(trees):
                F[:, c] += tree.predict(X)[:, 0]
            stages.append(trees)
    return init, stages


def _scale_leaves(tree: Tree, lr: float) -> None:
    tree.value = [[v * lr for v in vals] for vals in tree.value]


def boosting_scores(init, stages, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    F = np.tile(np.asarray(init, dtype=np.float64), (X.shape[0], 1))
    for trees in stages:
        for c, tree in enumerate(trees):
            F[:, c] += tree.predict(X)[:, 0]
    return F


def boosting_proba(init, stages, X) -> np.ndarray:
    F = boosting_scores(init, stages, X)
    if F.shape[1] == 1:
        p1 = _sigmoid(F[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return _softmax(F)


def tree_importance(trees, n_features: int) -> np.ndarray:
    """Summed split gains per feature, normalised to sum 1 (zeros if no splits)."""
    imp = np.zeros(n_features)
    for t in trees:
        for f, g in zip(t.feature, t.gain):
            if f >= 0:
                imp[f] += g
    s = imp.sum()
    return imp / s if s > 0 else imp
