"""Joint-centre localisation by normalised cross-correlation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

import numpy as np
from skimage.feature import match_template

from ..errors import ShapeError

NCC_THRESHOLD = 0.3
TEMPLATE_MATCH = "template_match"
GROUND_TRUTH_FALLBACK = "ground_truth_fallback"


@dataclass(frozen=True)
class RoiBox:
    center_px: tuple  # (x, y) integer detector coordinates
    size_px: int
    localization_score: float
    method: str

    @property
    def bounds(self) -> tuple:
        """(x0, y0, x1, y1), half-open."""
        h = self.size_px // 2
        x, y = self.center_px
        return (x - h, y - h, x - h + self.size_px, y - h + self.size_px)


def snap_box(center, size_px: int, shape) -> tuple:
    """Integer centre moved the least distance so the box fits in ``shape``."""
    h_img, w_img = shape
    if size_px > min(h_img, w_img):
        raise ShapeError(f"ROI of {size_px} px does not fit a {w_img}x{h_img} image")
    half = size_px // 2
    x = int(np.clip(int(np.floor(center[0] + 0.5)), half, w_img - size_px + half))
    y = int(np.clip(int(np.floor(center[1] + 0.5)), half, h_img - size_px + half))
    return (x, y)


def cut_template(image: np.ndarray, center, size_px: int) -> np.ndarray:
    """Square patch with its centre pixel at ``center`` (same convention as RoiBox)."""
    x, y = snap_box(center, size_px, image.shape)
    h = size_px // 2
    return np.asarray(image[y - h : y - h + size_px, x - h : x - h + size_px], dtype=np.float64)


def ncc_search(image: np.ndarray, template: np.ndarray, window: Optional[tuple] = None):
    """Best NCC over template centres inside ``window`` = (x0, y0, x1, y1) inclusive.

    Returns (score, (x, y) centre).
    """
    image = np.asarray(image, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    th, tw = template.shape
    h, w = image.shape
    if th > h or tw > w:
        raise ShapeError("template larger than image")
    hy, hx = th // 2, tw // 2
    # valid centres: the template must lie fully inside the image
    cx0, cy0, cx1, cy1 = hx, hy, w - tw + hx, h - th + hy
    if window is not None:
        cx0, cy0 = max(cx0, window[0]), max(cy0, window[1])
        cx1, cy1 = min(cx1, window[2]), min(cy1, window[3])
    if cx0 > cx1 or cy0 > cy1:
        raise ShapeError("search window leaves no valid template position")
    sub = image[cy0 - hy : cy1 - hy + th, cx0 - hx : cx1 - hx + tw]
    ncc = match_template(sub, template)
    ncc = np.nan_to_num(ncc, nan=-1.0)
    iy, ix = np.unravel_index(int(np.argmax(ncc)), ncc.shape)
    return float(ncc[iy, ix]), (cx0 + int(ix), cy0 + int(iy))


def locate_roi(
    image: np.ndarray,
    template: np.ndarray,
    roi_px: int,
    fallback_center=None,
    side: Optional[str] = None,
    threshold: float = NCC_THRESHOLD,
    search_fraction: float = 0.25,
) -> RoiBox:
    """ROI centred on the best template match near the image middle.

    The template shows a right knee's medial compartment.  The two
    compartments look alike, so with a known ``side`` the search covers only
    the medial half of the window (image right for right knees, mirrored
    template on the left for left knees); without it both orientations and the
    full window are tried.  Below ``threshold`` the box falls back to
    ``fallback_center`` (the known joint centre; the image middle when none is
    given).
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if template.shape[0] > h or template.shape[1] > w:
        raise ShapeError("template larger than image")
    mx, my = (w - 1) / 2, (h - 1) / 2
    rx, ry = search_fraction * w, search_fraction * h
    window = (int(np.ceil(mx - rx)), int(np.ceil(my - ry)), int(np.floor(mx + rx)), int(np.floor(my + ry)))
    x0, y0, x1, y1 = window
    if side == "right":
        searches = [(template, (int(np.ceil(mx)), y0, x1, y1))]
    elif side == "left":
        searches = [(template[:, ::-1], (x0, y0, int(np.floor(mx)), y1))]
    else:
        searches = [(template, window), (template[:, ::-1], window)]
    best = (-np.inf, None)
    for t, win in searches:
        score, center = ncc_search(image, t, win)
        if score > best[0]:
            best = (score, center)
    score, center = best
    method = TEMPLATE_MATCH
    if score < threshold:
        method = GROUND_TRUTH_FALLBACK
        center = fallback_center if fallback_center is not None else (mx, my)
    return RoiBox(snap_box(center, roi_px, image.shape), int(roi_px), float(np.clip(score, -1.0, 1.0)), method)


@lru_cache(maxsize=4)
def packaged_template(profile: str = "desk") -> np.ndarray:
    """Committed template for ``profile``; other profiles are rendered on demand."""
    ref = resources.files("pssf") / "data" / f"{profile}_template.npy"
    if ref.is_file():
        with ref.open("rb") as fh:
            return np.load(fh).astype(np.float64)
    return render_template(profile)


def template_morphology():
    from ..phantom import GRADE_RANGES, SHAPE_RANGES, KneeMorphology

    g0 = GRADE_RANGES[0]
    mid = lambda r: float(sum(r)) / 2  # noqa: E731
    return KneeMorphology(
        kl_grade=0,
        jsw_med_mm=mid(g0["jsw_med_mm"]),
        jsw_lat_mm=mid(g0["jsw_lat_mm"]),
        osteophyte_count=0,
        osteophyte_max_size_mm=0.0,
        osteophyte_sites=(),
        sclerosis_factor=1.0,
        varus_valgus_deg=0.0,
        condyle_width_mm=mid(SHAPE_RANGES["condyle_width_mm"]),
        condyle_height_mm=mid(SHAPE_RANGES["condyle_height_mm"]),
        plateau_width_mm=mid(SHAPE_RANGES["plateau_width_mm"]),
        side="right",
    )


def render_template(profile: str = "desk") -> np.ndarray:
    """Noiseless grade-0 reference radiograph cut around its joint centre."""
    from ..physics import load_physics
    from ..projector import PROFILES, make_protocols, simulate

    proto = make_protocols(profile, photons_ref=float("inf"), readout_sigma_dn=0.0)[0]
    img = simulate(template_morphology(), proto, load_physics(), seed=0, knee_id="template")
    return cut_template(img.pixels, img.joint_center_px, PROFILES[profile]["template_px"])
