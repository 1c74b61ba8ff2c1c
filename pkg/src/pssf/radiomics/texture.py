"""Texture-matrix features on a discretised 2D raster.

Levels are integers in ``[1, n_bins]``.  Directional families (GLCM, GLRLM)
compute features per direction and average the features.  Zones (GLSZM) are
8-connected; NGTDM and GLDM use the Chebyshev-1 neighbourhood, restricted to
pixels inside the raster, with dependence threshold 0.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import ShapeError

# (drow, dcol) for 0, 45, 90 and 135 degrees; row index grows downwards
DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))
NEIGHBOURS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0))
# Coarseness is unbounded for a flat raster; report this sentinel instead.
COARSENESS_FLAT = 1e6

GLCM_NAMES = ("contrast", "dissimilarity", "homogeneity", "asm", "entropy", "correlation")
GLRLM_NAMES = ("sre", "lre", "rln", "gln", "rp")
GLSZM_NAMES = ("sze", "lze", "zsn", "gln", "zp")
NGTDM_NAMES = ("coarseness", "contrast", "busyness", "complexity", "strength")
GLDM_NAMES = ("sde", "lde", "dn", "gln", "de")


def _as_levels(levels) -> np.ndarray:
    a = np.asarray(levels)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError("texture features need a non-empty 2D raster")
    if a.min() < 1:
        raise ShapeError("levels must be >= 1")
    return a.astype(np.int64)


def _pairs(a: np.ndarray, dr: int, dc: int):
    """Values at p and p + (dr, dc) for every pixel pair inside the raster."""
    h, w = a.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    return a[r0:r1, c0:c1], a[r0 + dr : r1 + dr, c0 + dc : c1 + dc]


def glcm_matrix(levels, n_bins: int, direction) -> np.ndarray:
    """Symmetric co-occurrence counts (unnormalised) for one direction."""
    a = _as_levels(levels)
    x, y = _pairs(a, *direction)
    idx = (x.ravel() - 1) * n_bins + (y.ravel() - 1)
    c = np.bincount(idx, minlength=n_bins * n_bins).reshape(n_bins, n_bins)
    return c + c.T


def glcm_direction_features(P: np.ndarray) -> dict:
    total = P.sum()
    if total == 0:
        raise ShapeError("no pixel pairs in this direction")
    p = P / total
    n = p.shape[0]
    i, j = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
    diff = np.abs(i - j)
    nz = p[p > 0]
    pi = p.sum(axis=1)
    lv = np.arange(1, n + 1)
    mu = np.sum(lv * pi)
    var = np.sum((lv - mu) ** 2 * pi)
    if var <= 1e-15:
        corr = 1.0
    else:
        # symmetric matrix: both marginals share mean and variance
        corr = float(np.sum((i - mu) * (j - mu) * p) / var)
    return {
        "contrast": float(np.sum(diff**2 * p)),
        "dissimilarity": float(np.sum(diff * p)),
        "homogeneity": float(np.sum(p / (1.0 + diff))),
        "asm": float(np.sum(p * p)),
        "entropy": float(-np.sum(nz * np.log2(nz))),
        "correlation": corr,
    }


def _average(per_dir: list, names) -> dict:
    if not per_dir:
        raise ShapeError("raster too small for any direction")
    return {k: float(np.mean([d[k] for d in per_dir])) for k in names}


def glcm_features(levels, n_bins: int) -> dict:
    a = _as_levels(levels)
    out = []
    for d in DIRECTIONS:
        P = glcm_matrix(a, n_bins, d)
        if P.sum() > 0:
            out.append(glcm_direction_features(P))
    return _average(out, GLCM_NAMES)


def _lines(a: np.ndarray, direction) -> list:
    """Every maximal line of pixels along ``direction``."""
    dr, dc = direction
    if dr == 0:
        return list(a)
    if dc == 0:
        return list(a.T)
    # 45 deg runs up-right = anti-diagonals; 135 deg runs up-left = diagonals
    b = a[:, ::-1] if dc == 1 else a
    h, w = b.shape
    return [np.diagonal(b, k) for k in range(-(h - 1), w)]


def run_lengths(levels, direction):
    """(level, length) of every run along ``direction``."""
    a = _as_levels(levels)
    lines = _lines(a, direction)
    # join lines with a 0 separator (levels are >= 1) and split on value changes
    seq = np.concatenate([np.append(ln, 0) for ln in lines])
    change = np.flatnonzero(np.diff(np.concatenate(([-1], seq))) != 0)
    lengths = np.diff(np.append(change, seq.size))
    vals = seq[change]
    keep = vals > 0
    return vals[keep], lengths[keep]


def _emphasis_features(vals, sizes, n_pixels: int, n_bins: int, prefix: tuple) -> dict:
    """Shared formulas for run / zone / dependence style matrices."""
    s_name, l_name, size_nu, gl_nu, pct = prefix
    n = vals.size
    sizes = sizes.astype(np.float64)
    per_level = np.bincount(vals, minlength=n_bins + 1).astype(np.float64)
    per_size = np.bincount(sizes.astype(np.int64)).astype(np.float64)
    return {
        s_name: float(np.sum(1.0 / sizes**2) / n),
        l_name: float(np.sum(sizes**2) / n),
        size_nu: float(np.sum(per_size**2) / n),
        gl_nu: float(np.sum(per_level**2) / n),
        pct: float(n / n_pixels),
    }


def glrlm_features(levels, n_bins: int) -> dict:
    a = _as_levels(levels)
    out = []
    for d in DIRECTIONS:
        vals, lengths = run_lengths(a, d)
        out.append(_emphasis_features(vals, lengths, a.size, n_bins, ("sre", "lre", "rln", "gln", "rp")))
    return _average(out, GLRLM_NAMES)


EIGHT = np.ones((3, 3), dtype=bool)


def zones(levels):
    """(level, size) of every 8-connected zone."""
    a = _as_levels(levels)
    vals, sizes = [], []
    for g in np.unique(a):
        lab, nlab = ndimage.label(a == g, structure=EIGHT)
        cnt = np.bincount(lab.ravel(), minlength=nlab + 1)[1:]
        vals.append(np.full(nlab, g))
        sizes.append(cnt)
    return np.concatenate(vals), np.concatenate(sizes)


def glszm_features(levels, n_bins: int) -> dict:
    a = _as_levels(levels)
    vals, sizes = zones(a)
    return _emphasis_features(vals, sizes, a.size, n_bins, ("sze", "lze", "zsn", "gln", "zp"))


def _neighbour_stack(a: np.ndarray):
    """Shifted copies of ``a`` for the 8 neighbours plus a validity mask."""
    h, w = a.shape
    pad = np.zeros((h + 2, w + 2), dtype=a.dtype)
    pad[1:-1, 1:-1] = a
    valid = np.zeros((h + 2, w + 2), dtype=bool)
    valid[1:-1, 1:-1] = True
    vals = np.stack([pad[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in NEIGHBOURS])
    ok = np.stack([valid[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in NEIGHBOURS])
    return vals, ok


def _need_neighbourhood(a: np.ndarray) -> None:
    if a.size < 2:
        raise ShapeError("neighbourhood features need at least two pixels")


def ngtdm_features(levels, n_bins: int) -> dict:
    a = _as_levels(levels)
    _need_neighbourhood(a)
    vals, ok = _neighbour_stack(a)
    cnt = ok.sum(axis=0)
    mean_nb = (vals * ok).sum(axis=0) / cnt
    diff = np.abs(a - mean_nb)
    n_v = a.size
    lv = np.arange(1, n_bins + 1)
    n_i = np.bincount(a.ravel(), minlength=n_bins + 1)[1:].astype(np.float64)
    s_i = np.bincount(a.ravel(), weights=diff.ravel(), minlength=n_bins + 1)[1:]
    p_i = n_i / n_v
    present = p_i > 0
    g = lv[present].astype(np.float64)
    p = p_i[present]
    s = s_i[present]
    ng = g.size
    ps = np.sum(p * s)
    coarseness = COARSENESS_FLAT if ps == 0 else 1.0 / ps
    gi, gj = np.meshgrid(g, g, indexing="ij")
    pi, pj = np.meshgrid(p, p, indexing="ij")
    si, sj = np.meshgrid(s, s, indexing="ij")
    if ng > 1:
        contrast = np.sum(pi * pj * (gi - gj) ** 2) / (ng * (ng - 1)) * s.sum() / n_v
    else:
        contrast = 0.0
    den = np.sum(np.abs(gi * pi - gj * pj))
    busyness = ps / den if den > 0 else 0.0
    complexity = np.sum(np.abs(gi - gj) * (pi * si + pj * sj) / (pi + pj)) / n_v
    strength = np.sum((pi + pj) * (gi - gj) ** 2) / s.sum() if s.sum() > 0 else 0.0
    return {
        "coarseness": float(coarseness),
        "contrast": float(contrast),
        "busyness": float(busyness),
        "complexity": float(complexity),
        "strength": float(strength),
    }


def dependence(levels) -> np.ndarray:
    """1 + number of in-raster Chebyshev neighbours with the same level."""
    a = _as_levels(levels)
    vals, ok = _neighbour_stack(a)
    return 1 + np.sum(ok & (vals == a), axis=0)


def gldm_features(levels, n_bins: int) -> dict:
    a = _as_levels(levels)
    _need_neighbourhood(a)
    dep = dependence(a).ravel()
    out = _emphasis_features(a.ravel(), dep, a.size, n_bins, ("sde", "lde", "dn", "gln", "_pct"))
    del out["_pct"]
    joint = np.bincount((a.ravel() - 1) * 9 + (dep - 1), minlength=n_bins * 9)
    p = joint[joint > 0] / a.size
    out["de"] = float(-np.sum(p * np.log2(p)))
    return {k: out[k] for k in GLDM_NAMES}


FAMILIES = {
    "glcm": glcm_features,
    "glrlm": glrlm_features,
    "glszm": glszm_features,
    "ngtdm": ngtdm_features,
    "gldm": gldm_features,
}
FAMILY_NAMES = {"glcm": GLCM_NAMES, "glrlm": GLRLM_NAMES, "glszm": GLSZM_NAMES, "ngtdm": NGTDM_NAMES, "gldm": GLDM_NAMES}
