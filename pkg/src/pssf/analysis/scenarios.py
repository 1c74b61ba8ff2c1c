"""Within-, cross- and multi-protocol training/testing scenarios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ScenarioError, SplitError
from ..ml.metrics import compute_metrics
from ..ml.models import TASKS
from ..ml.pipeline import MLConfig, fit_with_selection, selection_candidates, task_labels
from ..seeding import stable_hash

ALL_PROTOCOLS = ("reference", "low_dose", "geometry_shift")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    train_protocols: tuple
    test_protocols: tuple

    def __post_init__(self):
        if not self.train_protocols or not self.test_protocols:
            raise ScenarioError(f"scenario {self.name} needs train and test protocols")

    @property
    def train_set(self) -> str:
        """Name of the training population, shared by scenarios that train alike."""
        return "reference" if self.train_protocols == ("reference",) else "+".join(self.train_protocols)


SCENARIOS = (
    ScenarioSpec("within_protocol", ("reference",), ("reference",)),
    ScenarioSpec("cross_protocol", ("reference",), ("low_dose", "geometry_shift")),
    ScenarioSpec("multi_protocol", ALL_PROTOCOLS, ALL_PROTOCOLS),
)


class RowTable:
    """Per-row labels and folds for the base (repeat 0) rows of a matrix."""

    def __init__(self, fm, manifest, split):
        knees = manifest.knees()
        self.fm = fm
        base = [i for i, k in enumerate(fm.keys) if k[2] == 0]
        self.rows = np.array(base, dtype=int)
        self.protocol = np.array([fm.keys[i][1] for i in base])
        self.subject = np.array([knees[fm.keys[i][0]][0] for i in base])
        self.grade = np.array([knees[fm.keys[i][0]][2] for i in base], dtype=int)
        self.fold = np.array([split.fold_of(s) for s in self.subject])

    def select(self, protocols, fold, task):
        m = np.isin(self.protocol, list(protocols)) & (self.fold == fold)
        tmask, y = task_labels(self.grade[m], task)
        rows = self.rows[m][tmask]
        return rows, y, self.subject[m][tmask]


def _check_leakage(train_subjects, test_subjects) -> None:
    leak = set(train_subjects) & set(test_subjects)
    if leak:
        raise SplitError(f"test subjects present in training data: {sorted(leak)[:5]}")


def model_seed(master_seed: int, train_set: str, task: str, kind: str) -> int:
    return stable_hash(int(master_seed), "model", train_set, task, kind)


def train_models(fm, table: RowTable, train_protocols, task: str, cfg: MLConfig, master_seed: int) -> dict:
    """Fit every model kind for one training population and task."""
    Xtr_rows, ytr, s_tr = table.select(train_protocols, "train", task)
    Xva_rows, yva, _ = table.select(train_protocols, "val", task)
    if len(Xtr_rows) == 0 or len(Xva_rows) == 0:
        raise ScenarioError(f"no training/validation rows for protocols {train_protocols}")
    _, _, s_te = table.select(ALL_PROTOCOLS, "test", task)
    _check_leakage(s_tr, s_te)
    X = fm.values
    cands, info = selection_candidates(X[Xtr_rows], ytr, fm.columns, task, cfg)
    train_set = "reference" if tuple(train_protocols) == ("reference",) else "+".join(train_protocols)
    models = {}
    for kind in cfg.kinds:
        m = fit_with_selection(X[Xtr_rows], ytr, X[Xva_rows], yva, fm.columns, kind, task, cfg,
                               model_seed(master_seed, train_set, task, kind), cands)
        m.config = {**m.config, "selection": info, "train_protocols": list(train_protocols),
                    "n_train": int(len(ytr)), "n_val": int(len(yva))}
        models[kind] = m
    return models


def evaluate(model, fm, table: RowTable, spec: ScenarioSpec, test_protocol: str):
    rows, y, s_te = table.select((test_protocol,), "test", model.task)
    if len(rows) == 0:
        raise ScenarioError(f"scenario {spec.name}: empty test set for {test_protocol}")
    prob = model.predict_proba(fm.values[rows], fm.columns)
    metrics = compute_metrics(y, prob, TASKS[model.task])
    report = {
        "scenario": spec.name,
        "train_protocols": list(spec.train_protocols),
        "test_protocol": test_protocol,
        "task": model.task,
        "kind": model.kind,
        **metrics,
    }
    preds = [
        {"knee_id": fm.keys[r][0], "protocol": fm.keys[r][1], "y_true": int(t), **{f"p{c}": float(v) for c, v in enumerate(p)}}
        for r, t, p in zip(rows, y, prob)
    ]
    return report, preds


def run_scenario(spec: ScenarioSpec, fm, manifest, split, cfg: MLConfig = MLConfig(), master_seed: int = 0,
                 models=None, table=None):
    """Reports (one per model kind, task and test protocol) plus predictions.

    ``models`` maps (train_set, task) -> {kind: TrainedModel}; missing entries
    are trained here.
    """
    table = table or RowTable(fm, manifest, split)
    present = set(table.protocol.tolist())
    missing = [p for p in spec.train_protocols + spec.test_protocols if p not in present]
    if missing:
        raise ScenarioError(f"scenario {spec.name}: no rows for protocols {missing}")
    models = {} if models is None else models
    reports, predictions = [], {}
    for task in cfg.tasks:
        key = (spec.train_set, task)
        if key not in models:
            models[key] = train_models(fm, table, spec.train_protocols, task, cfg, master_seed)
        for kind in cfg.kinds:
            for test_p in spec.test_protocols:
                rep, preds = evaluate(models[key][kind], fm, table, spec, test_p)
                reports.append(rep)
                predictions[(spec.name, task, kind, test_p)] = preds
    return reports, predictions


def ordering_checks(reports, slack: float = 0.02) -> list:
    """Binary-task AUC ordering per model kind.

    cross(test) <= within, and multi(test) >= cross(test) - slack, for each
    shifted test protocol.
    """
    auc = {(r["scenario"], r["kind"], r["test_protocol"]): r["auc"] for r in reports if r["task"] == "binary_0v2"}
    kinds = sorted({k for _, k, _ in auc})
    checks = []
    for kind in kinds:
        within = auc.get(("within_protocol", kind, "reference"))
        for tp in ("low_dose", "geometry_shift"):
            cross = auc.get(("cross_protocol", kind, tp))
            multi = auc.get(("multi_protocol", kind, tp))
            if within is not None and cross is not None:
                checks.append({"check": "cross_le_within", "kind": kind, "test_protocol": tp,
                               "lhs": cross, "rhs": within, "pass": bool(cross <= within)})
            if multi is not None and cross is not None:
                checks.append({"check": "multi_ge_cross_minus_slack", "kind": kind, "test_protocol": tp,
                               "lhs": multi, "rhs": cross - slack, "pass": bool(multi >= cross - slack)})
    return checks


def feature_importance(model) -> list:
    return model.importance()
