"""ROI cropping, z-score normalisation and fixed-bin-number discretisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateRoiError, ParameterError

Z_CLAMP = 3.0
# Values within this distance below a bin edge are counted into the upper bin,
# so float noise from affine rescaling cannot flip a level.
EDGE_GUARD = 1e-9


@dataclass
class DiscretizedRoi:
    levels: np.ndarray  # int, values in [1, n_bins]
    n_bins: int
    z_mean: float
    z_std: float
    z: np.ndarray  # z-scored intensities, same shape as levels

    def __post_init__(self):
        if self.z_std <= 0:
            raise DegenerateRoiError("z_std must be positive")
        if self.levels.size and (self.levels.min() < 1 or self.levels.max() > self.n_bins):
            raise DegenerateRoiError("levels outside [1, n_bins]")


def crop(image: np.ndarray, box) -> np.ndarray:
    x0, y0, x1, y1 = box.bounds
    return np.asarray(image[y0:y1, x0:x1], dtype=np.float64)


def discretize(z: np.ndarray, n_bins: int) -> np.ndarray:
    """``1 + floor((clamp(z, -3, 3) + 3) / 6 * n_bins)`` with z = +3 in the top bin."""
    if n_bins < 2:
        raise ParameterError("n_bins must be >= 2")
    t = (np.clip(z, -Z_CLAMP, Z_CLAMP) + Z_CLAMP) / (2 * Z_CLAMP) * n_bins
    return np.minimum(1 + np.floor(t + EDGE_GUARD).astype(np.int64), n_bins)


def zscore(values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    mu = float(values.mean())
    sd = float(values.std())
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, abs(mu)):
        raise DegenerateRoiError("ROI has zero intensity variance")
    return (values - mu) / sd, mu, sd


def preprocess_array(raw: np.ndarray, n_bins: int = 32) -> DiscretizedRoi:
    z, mu, sd = zscore(raw)
    return DiscretizedRoi(discretize(z, n_bins), n_bins, mu, sd, z)


def preprocess(image: np.ndarray, box, n_bins: int = 32) -> DiscretizedRoi:
    return preprocess_array(crop(image, box), n_bins)
