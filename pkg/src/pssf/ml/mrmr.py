"""Minimum-redundancy maximum-relevance ranking (difference form)."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)

N_BINS = 8


def equal_frequency_bins(x: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Bin index per value from the empirical quantiles; tied values share a bin."""
    x = np.asarray(x, dtype=np.float64)
    edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, x, side="right")


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information (nats) of two discrete label vectors."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    na, nb = ai.max() + 1, bi.max() + 1
    joint = np.bincount(ai * nb + bi, minlength=na * nb).reshape(na, nb) / ai.size
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mrmr_rank(X, y, k: int, names=None) -> list:
    """Greedy ranking: relevance I(f; y) minus mean I(f; s) over selected s.

    Returns up to ``k`` column indices (or names when ``names`` is given).
    Ties go to the earlier column.
    """
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    if k > p:
        log.warning("mRMR k=%d exceeds %d columns; clamped", k, p)
        k = p
    D = np.column_stack([equal_frequency_bins(X[:, j]) for j in range(p)]) if p else np.zeros((len(y), 0), int)
    rel = np.array([mutual_information(D[:, j], y) for j in range(p)])
    selected = []
    red_sum = np.zeros(p)
    remaining = np.ones(p, dtype=bool)
    for step in range(k):
        score = rel if step == 0 else rel - red_sum / step
        score = np.where(remaining, score, -np.inf)
        j = int(np.argmax(score))
        selected.append(j)
        remaining[j] = False
        for i in np.flatnonzero(remaining):
            red_sum[i] += mutual_information(D[:, i], D[:, j])
    if names is not None:
        return [names[j] for j in selected]
    return selected
