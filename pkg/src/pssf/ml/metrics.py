"""Classification metrics: rank AUC, balanced accuracy, macro F1, confusion."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..errors import MetricUndefinedError, ShapeError


def auc(y_true, score) -> float:
    """Mann-Whitney AUC; tied positive/negative scores count one half."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(score, dtype=np.float64)
    if y.shape != s.shape:
        raise ShapeError("labels and scores differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs both classes")
    r = rankdata(s)  # average ranks carry the tie correction
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def hard_labels(prob: np.ndarray) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lower class
    return np.argmax(np.asarray(prob), axis=1)


def balanced_accuracy(cm: np.ndarray) -> float:
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def macro_f1(cm: np.ndarray) -> float:
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    den = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, den, out=np.zeros_like(tp), where=den > 0)
    return float(f1.mean())


def compute_metrics(y_true, prob, n_classes: int) -> dict:
    """AUC (binary, or macro one-vs-rest), balanced accuracy, macro F1, confusion.

    ``prob`` is rows x n_classes.  When AUC is undefined (a class missing from
    ``y_true``) it is reported as None and the other metrics still computed.
    """
    y = np.asarray(y_true, dtype=int)
    prob = np.asarray(prob, dtype=np.float64)
    if prob.shape != (y.size, n_classes):
        raise ShapeError("probability matrix shape does not match labels")
    cm = confusion_matrix(y, hard_labels(prob), n_classes)
    try:
        if n_classes == 2:
            a = auc(y == 1, prob[:, 1])
        else:
            a = float(np.mean([auc(y == c, prob[:, c]) for c in range(n_classes)]))
    except MetricUndefinedError:
        a = None
    return {
        "auc": a,
        "balanced_accuracy": balanced_accuracy(cm),
        "macro_f1": macro_f1(cm),
        "confusion_matrix": cm.tolist(),
        "n": int(y.size),
    }
