"""Selection + model fitting with validation-fold grid search."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import TrainingError
from ..radiomics.extract import prune_correlated
from .linear import class_weights, fit_logreg_l2, l1_select
from .metrics import compute_metrics
from .models import TASKS, TrainedModel
from .mrmr import mrmr_rank
from .trees import BoostingConfig, ForestConfig, fit_gradient_boosting, fit_random_forest

log = logging.getLogger(__name__)


@dataclass
class MLConfig:
    kinds: tuple = ("logreg_l2", "random_forest", "gradient_boosting")
    tasks: tuple = ("binary_0v2", "three_class")
    prune_threshold: float = 0.9
    k_grid: tuple = (10, 20)
    l1_grid: tuple = (0.005, 0.02)
    l2_grid: tuple = (0.01, 0.1)
    forest: ForestConfig = field(default_factory=ForestConfig)
    boosting: BoostingConfig = field(default_factory=BoostingConfig)

    def echo(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def task_labels(grades, task: str):
    """(row mask, labels) for a task given KL grades per row."""
    g = np.asarray(grades, dtype=int)
    if task == "binary_0v2":
        mask = (g == 0) | (g == 2)
        return mask, (g[mask] == 2).astype(int)
    if task == "three_class":
        return np.ones(g.size, dtype=bool), g.copy()
    raise TrainingError(f"unknown task {task!r}")


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


def train_logreg_l2(X, y, lam2: float, task: str, features, seed: int = 0) -> TrainedModel:
    X = np.asarray(X, dtype=np.float64)
    mu, sd = _standardize(X)
    theta, info = fit_logreg_l2((X - mu) / sd, y, lam2, TASKS[task])
    return TrainedModel(
        "logreg_l2", task, list(features), {"theta": theta.tolist()},
        {"mean": mu.tolist(), "std": sd.tolist()}, {"lambda2": lam2, **info}, seed,
    )


def train_random_forest(X, y, cfg: ForestConfig, task: str, features, seed: int) -> TrainedModel:
    n_classes = TASKS[task]
    trees = fit_random_forest(X, y, n_classes, cfg, seed, class_weights(y, n_classes))
    return TrainedModel("random_forest", task, list(features), {"trees": [t.to_dict() for t in trees]}, {}, asdict(cfg), seed)


def train_gradient_boosting(X, y, cfg: BoostingConfig, task: str, features, seed: int = 0) -> TrainedModel:
    n_classes = TASKS[task]
    init, stages = fit_gradient_boosting(X, y, n_classes, cfg, class_weights(y, n_classes))
    params = {"init": init.tolist(), "stages": [[t.to_dict() for t in s] for s in stages]}
    return TrainedModel("gradient_boosting", task, list(features), params, {}, asdict(cfg), seed)


def selection_candidates(X, y, columns, task: str, cfg: MLConfig) -> tuple:
    """Feature sets for the grid: prune -> mRMR top-k -> L1 refinement.

    Everything is fit on the rows given (the training fold).  Returns
    ``(candidates, info)``; candidates are (k, lambda1, features), deduplicated.
    """
    X = np.asarray(X, dtype=np.float64)
    kept, dropped = prune_correlated(X, list(columns), cfg.prune_threshold)
    pos = {c: i for i, c in enumerate(columns)}
    Xk = X[:, [pos[c] for c in kept]]
    mu, sd = _standardize(Xk)
    Z = (Xk - mu) / sd
    ranked = mrmr_rank(Z, y, max(cfg.k_grid), kept)
    n_classes = TASKS[task]
    cands, seen = [], set()
    for k in cfg.k_grid:
        top = ranked[:k]
        idx = [kept.index(c) for c in top]
        for lam in cfg.l1_grid:
            sel = l1_select(Z[:, idx], y, lam, top, n_classes)
            if not sel:
                sel = top[:1]
            key = tuple(sel)
            if key not in seen:
                seen.add(key)
                cands.append((k, lam, sel))
    info = {"pruned": [list(d) for d in dropped], "kept_after_pruning": kept, "mrmr_ranking": ranked}
    return cands, info


def _fit(kind, X, y, hp, task, features, cfg: MLConfig, seed):
    if kind == "logreg_l2":
        return train_logreg_l2(X, y, hp, task, features, seed)
    if kind == "random_forest":
        return train_random_forest(X, y, cfg.forest, task, features, seed)
    if kind == "gradient_boosting":
        return train_gradient_boosting(X, y, cfg.boosting, task, features, seed)
    raise TrainingError(f"unknown model kind {kind!r}")


def _val_score(model, X, y) -> tuple:
    m = compute_metrics(y, model.predict_proba(X), model.n_classes)
    return (m["auc"] if m["auc"] is not None else -1.0, m["balanced_accuracy"])


def fit_with_selection(Xtr, ytr, Xva, yva, columns, kind: str, task: str, cfg: MLConfig, seed: int, candidates=None):
    """Grid search over (selection candidate, model hyperparameter) on validation.

    Ranking key: validation AUC, then balanced accuracy, then grid order.
    Returns the model fitted on the training rows and a search log.
    """
    if candidates is None:
        candidates, _ = selection_candidates(Xtr, ytr, columns, task, cfg)
    pos = {c: i for i, c in enumerate(columns)}
    hps = cfg.l2_grid if kind == "logreg_l2" else (None,)
    best, best_key, trials = None, None, []
    for k, lam1, feats in candidates:
        idx = [pos[c] for c in feats]
        for hp in hps:
            model = _fit(kind, Xtr[:, idx], ytr, hp, task, feats, cfg, seed)
            score = _val_score(model, Xva[:, idx], yva)
            trials.append({"k": k, "lambda1": lam1, "hyper": hp, "n_features": len(feats),
                           "val_auc": score[0], "val_balanced_accuracy": score[1]})
            if best_key is None or score > best_key:
                best, best_key = model, score
    best.config = {**best.config, "search": trials}
    return best
