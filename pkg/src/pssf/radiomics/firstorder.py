"""Intensity-histogram statistics."""

from __future__ import annotations

import numpy as np

FIRST_ORDER_NAMES = (
    "mean",
    "variance",
    "skewness",
    "kurtosis",
    "minimum",
    "maximum",
    "median",
    "p10",
    "p90",
    "iqr",
    "range",
    "mad",
    "rms",
    "energy",
    "entropy",
    "uniformity",
)


def first_order(levels: np.ndarray, values: np.ndarray, n_bins: int) -> dict:
    """Statistics of ``values`` (z-scored ROI) plus entropy/uniformity of ``levels``.

    Kurtosis is the excess kurtosis; ``mad`` is the mean absolute deviation
    from the mean; percentiles use linear interpolation.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    mu = x.mean()
    d = x - mu
    var = np.mean(d * d)
    sd = np.sqrt(var)
    if sd > 0:
        skew = np.mean(d**3) / sd**3
        kurt = np.mean(d**4) / var**2 - 3.0
    else:
        skew = kurt = 0.0
    p10, p25, p50, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    counts = np.bincount(np.asarray(levels).ravel(), minlength=n_bins + 1)[1:]
    p = counts[counts > 0] / counts.sum()
    return {
        "mean": float(mu),
        "variance": float(var),
        "skewness": float(skew),
        "kurtosis": float(kurt),
        "minimum": float(x.min()),
        "maximum": float(x.max()),
        "median": float(p50),
        "p10": float(p10),
        "p90": float(p90),
        "iqr": float(p75 - p25),
        "range": float(x.max() - x.min()),
        "mad": float(np.mean(np.abs(d))),
        "rms": float(np.sqrt(np.mean(x * x))),
        "energy": float(np.sum(x * x)),
        "entropy": float(-np.sum(p * np.log2(p))),
        "uniformity": float(np.sum(p * p)),
    }
