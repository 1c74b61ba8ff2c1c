"""2D shape descriptors of the bone mask inside the ROI."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.measure import perimeter_crofton
from skimage.morphology import remove_small_holes

SHAPE_NAMES = (
    "area_fraction",
    "perimeter",
    "circularity",
    "femoral_elongation",
    "tibial_elongation",
    "gap_mm",
)
EIGHT = np.ones((3, 3), dtype=bool)
# pre-threshold smoothing (px) and the smallest class Otsu must leave
SMOOTH_SIGMA_PX = 1.0
MIN_CLASS_FRACTION = 0.02


class ShapeUnavailable(Exception):
    """The ROI histogram does not split into bone and background."""


def flatten(roi: np.ndarray) -> np.ndarray:
    """Log intensity minus each column's maximum (its bone-free soft-tissue level).

    The limb envelope makes soft tissue brighten towards the skin line; that
    trend runs along columns and would otherwise dominate the histogram.
    """
    lx = np.log(np.maximum(np.asarray(roi, dtype=np.float64), 1.0))
    lx = ndimage.gaussian_filter(lx, SMOOTH_SIGMA_PX, mode="nearest")
    ref = ndimage.median_filter(lx.max(axis=0), size=5, mode="nearest")
    return lx - ref[None, :]


def bone_mask(roi: np.ndarray) -> np.ndarray:
    """Otsu split of the flattened ROI; bone is the darker class."""
    x = flatten(roi)
    if np.ptp(x) <= 1e-12:
        raise ShapeUnavailable("flat ROI")
    t = threshold_otsu(x)
    mask = x <= t
    frac = mask.mean()
    if not MIN_CLASS_FRACTION <= frac <= 1 - MIN_CLASS_FRACTION:
        raise ShapeUnavailable(f"Otsu split left a {frac:.3f} bone fraction")
    return mask


def elongation(component: np.ndarray) -> float:
    """sqrt(minor / major) eigenvalue ratio of the second-moment matrix."""
    r, c = np.nonzero(component)
    if r.size < 2:
        return 1.0
    cov = np.cov(np.vstack([c, r]).astype(np.float64), bias=True)
    ev = np.linalg.eigvalsh(cov)
    if ev[1] <= 0:
        return 1.0
    return float(np.sqrt(max(ev[0], 0.0) / ev[1]))


def vertical_gap_px(mask: np.ndarray) -> float:
    """Smallest joint gap over the central third of columns.

    Per column the gap is the longest background run with bone both above and
    below it; a column that is entirely bone has gap 0; columns with bone on
    one side only are ignored.  NaN when no column qualifies.
    """
    h, w = mask.shape
    lo, hi = w // 3, w - w // 3
    gaps = []
    for col in mask[:, lo:hi].T:
        if col.all():
            gaps.append(0)
            continue
        idx = np.flatnonzero(col)
        if idx.size < 2:
            continue
        inner = np.diff(idx) - 1
        if inner.max() > 0:
            gaps.append(int(inner.max()))
    return float(min(gaps)) if gaps else float("nan")


def shape_from_mask(mask: np.ndarray, pixel_mm: float = 1.0) -> dict:
    """Descriptors of the two largest 8-connected bone components.

    The upper component (by centroid row) is femoral, the lower tibial; with a
    single component both elongations describe it.  Circularity is the mean of
    the per-component ``4 pi A / P^2`` values, clipped to 1 because the
    perimeter estimate is slightly low on large smooth blobs.
    """
    mask = np.asarray(mask, dtype=bool)
    lab, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        raise ShapeUnavailable("no bone pixels")
    sizes = np.bincount(lab.ravel())[1:]
    keep = np.argsort(-sizes, kind="stable")[:2] + 1
    comps = [lab == k for k in keep]
    comps.sort(key=lambda c: np.nonzero(c)[0].mean())
    union = np.logical_or.reduce(comps)
    per = [perimeter_crofton(c, 4) for c in comps]
    circ = [min(1.0, 4 * np.pi * c.sum() / p**2) if p > 0 else 1.0 for c, p in zip(comps, per)]
    return {
        "area_fraction": float(union.mean()),
        "perimeter": float(sum(per) * pixel_mm),
        "circularity": float(np.mean(circ)),
        "femoral_elongation": elongation(comps[0]),
        "tibial_elongation": elongation(comps[-1]),
        "gap_mm": vertical_gap_px(union) * pixel_mm,
    }


def shape_features(roi: np.ndarray, pixel_mm: float) -> dict:
    """Bone-mask descriptors of a raw-intensity ROI (bone dark).

    Holes smaller than 0.5% of the ROI are filled so noise specks inside bone
    do not register as gaps.  Raises ``ShapeUnavailable`` on a failed split.
    """
    mask = bone_mask(roi)
    mask = remove_small_holes(mask, area_threshold=max(1, mask.size // 200))
    return shape_from_mask(mask, pixel_mm)
