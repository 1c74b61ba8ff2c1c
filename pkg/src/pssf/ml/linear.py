"""Weighted logistic / softmax regression with L2 or L1 penalties.

Parameters are a (p + 1) x K matrix ``theta``: the first row is the
intercept (never penalised).  Binary problems use K = 1 with the sigmoid
link; multi-class problems use K = n_classes with the softmax link.  Losses
are sample-weighted means.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError, TrainingError


def class_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-sample inverse-frequency weights ``n / (K * n_c)``."""
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    if np.count_nonzero(counts) < 2:
        raise TrainingError("training labels contain a single class")
    w_c = np.divide(y.size, n_classes * counts, out=np.zeros(n_classes), where=counts > 0)
    return w_c[y]


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def probabilities(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class probability matrix, rows x n_classes."""
    z = _design(X) @ theta
    if theta.shape[1] == 1:
        p1 = np.exp(_log_sigmoid(z[:, 0]))
        return np.column_stack([1.0 - p1, p1])
    return _softmax(z)


def data_loss(theta: np.ndarray, A: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted mean negative log-likelihood and its gradient (design matrix A)."""
    z = A @ theta
    sw = w.sum()
    if theta.shape[1] == 1:
        z = z[:, 0]
        nll = -(y * _log_sigmoid(z) + (1 - y) * _log_sigmoid(-z))
        loss = float(np.dot(w, nll) / sw)
        p = np.exp(_log_sigmoid(z))
        grad = A.T @ (w * (p - y)) / sw
        return loss, grad[:, None]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    nll = lse - z[np.arange(len(y)), y]
    loss = float(np.dot(w, nll) / sw)
    P = _softmax(z)
    P[np.arange(len(y)), y] -= 1.0
    grad = A.T @ (w[:, None] * P) / sw
    return loss, grad


def l2_objective(theta, A, y, w, lam):
    loss, grad = data_loss(theta, A, y, w)
    pen = theta.copy()
    pen[0] = 0.0
    return loss + 0.5 * lam * float(np.sum(pen * pen)), grad + lam * pen


def _check(X, y):
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in the design matrix")
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.size:
        raise DataError("X and y differ in length")
    return X, y


def _n_out(n_classes: int) -> int:
    return 1 if n_classes == 2 else n_classes


def fit_logreg_l2(X, y, lam: float, n_classes: int, tol: float = 1e-8, max_iter: int = 20000, weights=None):
    """Full-batch gradient descent with Armijo backtracking.

    Stops when the objective changes by less than ``tol`` (relative) or the
    gradient norm falls below ``tol``.  Returns ``(theta, info)``.
    """
    X, y = _check(X, y)
    w = class_weights(y, n_classes) if weights is None else np.asarray(weights, dtype=np.float64)
    A = _design(X)
    theta = np.zeros((A.shape[1], _n_out(n_classes)))
    f, g = l2_objective(theta, A, y, w, lam)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        gg = float(np.sum(g * g))
        if np.sqrt(gg) < tol:
            break
        while True:
            cand = theta - step * g
            fc, gc = l2_objective(cand, A, y, w, lam)
            if fc <= f - 0.5 * step * gg or step < 1e-12:
                break
            step *= 0.5
        done = abs(f - fc) <= tol * max(1.0, abs(f))
        theta, f, g = cand, fc, gc
        step *= 2.0
        if done:
            break
    return theta, {"objective": f, "iterations": it}


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def fit_logreg_l1(X, y, lam: float, n_classes: int, tol: float = 1e-7, max_iter: int = 5000, weights=None):
    """Proximal gradient (ISTA) with backtracking on the smooth part.

    Stops on relative objective change below ``tol`` or after ``max_iter``.
    """
    X, y = _check(X, y)
    w = class_weights(y, n_classes) if weights is None else np.asarray(weights, dtype=np.float64)
    A = _design(X)
    theta = np.zeros((A.shape[1], _n_out(n_classes)))

    def objective(th, smooth):
        return smooth + lam * float(np.abs(th[1:]).sum())

    f_s, g = data_loss(theta, A, y, w)
    F = objective(theta, f_s)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            cand = theta - step * g
            cand[1:] = _soft_threshold(cand[1:], step * lam)
            d = cand - theta
            fc_s, gc = data_loss(cand, A, y, w)
            if fc_s <= f_s + float(np.sum(g * d)) + float(np.sum(d * d)) / (2 * step) + 1e-15 or step < 1e-12:
                break
            step *= 0.5
        Fc = objective(cand, fc_s)
        done = abs(F - Fc) <= tol * max(1.0, abs(F))
        theta, f_s, g, F = cand, fc_s, gc, Fc
        step *= 2.0
        if done:
            break
    return theta, {"objective": F, "iterations": it}


def l1_select(X, y, lam: float, names, n_classes: int) -> list:
    """Features with any nonzero L1-penalised coefficient, in column order."""
    theta, _ = fit_logreg_l1(X, y, lam, n_classes)
    nz = np.any(theta[1:] != 0.0, axis=1)
    return [n for n, keep in zip(names, nz) if keep]
