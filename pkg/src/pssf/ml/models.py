"""Trained-model container: prediction, importance and JSON serialisation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SchemaError
from ..io import atomic_write_text
from .linear import probabilities
from .trees import Tree, boosting_proba, forest_proba, tree_importance

MODEL_FORMAT = "pssf-model"
MODEL_VERSION = 1
KINDS = ("logreg_l2", "random_forest", "gradient_boosting")
TASKS = {"binary_0v2": 2, "three_class": 3}


@dataclass
class TrainedModel:
    kind: str
    task: str
    features: list
    params: dict  # kind-specific: theta / trees / init + stages
    standardize: dict = field(default_factory=dict)  # {"mean": [...], "std": [...]} for logreg
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return TASKS[self.task]

    def _columns(self, X, columns=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if columns is not None:
            pos = {c: i for i, c in enumerate(columns)}
            missing = [c for c in self.features if c not in pos]
            if missing:
                raise SchemaError(f"input lacks model features: {missing[:5]}")
            X = X[:, [pos[c] for c in self.features]]
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise SchemaError(f"expected {len(self.features)} feature columns, got {X.shape}")
        return X

    def predict_proba(self, X, columns=None) -> np.ndarray:
        """Rows x classes probabilities; ``columns`` names the columns of ``X``."""
        X = self._columns(X, columns)
        if self.kind == "logreg_l2":
            Z = (X - np.asarray(self.standardize["mean"])) / np.asarray(self.standardize["std"])
            return probabilities(np.asarray(self.params["theta"], dtype=np.float64), Z)
        if self.kind == "random_forest":
            return forest_proba(self._trees(), X)
        if self.kind == "gradient_boosting":
            return boosting_proba(self.params["init"], self._stages(), X)
        raise SchemaError(f"unknown model kind {self.kind!r}")

    def _trees(self) -> list:
        if "_tree_cache" not in self.__dict__:
            self.__dict__["_tree_cache"] = [Tree.from_dict(t) for t in self.params["trees"]]
        return self.__dict__["_tree_cache"]

    def _stages(self) -> list:
        if "_stage_cache" not in self.__dict__:
            self.__dict__["_stage_cache"] = [[Tree.from_dict(t) for t in s] for s in self.params["stages"]]
        return self.__dict__["_stage_cache"]

    def importance(self) -> list:
        """(feature, score) sorted by descending score, ties in feature order.

        Logistic: |coefficient| on standardised inputs (max over classes for
        the softmax model).  Trees: normalised summed impurity decrease.
        """
        p = len(self.features)
        if self.kind == "logreg_l2":
            theta = np.asarray(self.params["theta"], dtype=np.float64)
            score = np.abs(theta[1:]).max(axis=1) if p else np.zeros(0)
        elif self.kind == "random_forest":
            score = tree_importance(self._trees(), p)
        else:
            score = tree_importance([t for s in self._stages() for t in s], p)
        order = sorted(range(p), key=lambda i: (-score[i], i))
        return [(self.features[i], float(score[i])) for i in order]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "task": self.task,
            "features": list(self.features),
            "standardize": self.standardize,
            "params": self.params,
            "config": self.config,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise SchemaError("not a pssf model document of a supported version")
        return cls(d["kind"], d["task"], d["features"], d["params"], d.get("standardize", {}), d.get("config", {}), d.get("seed", 0))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
