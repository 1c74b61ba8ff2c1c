"""Parametric 2D knee anatomy and per-material path-length rasters.

Canonical frame
---------------
A right knee seen antero-posteriorly and displayed with the patient's right
on the viewer's left, so the medial compartment lies at ``+x``.  Units are
millimetres, ``x`` grows to the right, ``y`` grows downwards, and the origin
sits on the tibial plateau line midway between the condyles.  Left knees are
rendered in the canonical frame and mirrored left-right afterwards.

Alignment convention: ``varus_valgus_deg < 0`` is varus, ``> 0`` is valgus.
The whole construct is rotated about the medial joint centre by that angle;
with ``y`` pointing down a positive angle turns clockwise on screen.

Out-of-plane extent (the beam direction) follows a chord model: every
horizontal run of a silhouette is treated as an ellipse of half-width ``a``
and half-depth ``depth_ratio * a``, so the path length at a pixel is the
chord of that ellipse through the pixel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import GeometryOverflowError, InvalidGradeError, InvariantViolationError

MATERIALS = ("cortical_bone", "trabecular_bone", "soft_tissue")
SITES = ("medial_femoral", "lateral_femoral", "tibial_spine")
SIDES = ("left", "right")

# Closed sampling intervals per KL-like grade.
GRADE_RANGES = {
    0: {
        "jsw_med_mm": (4.5, 5.5),
        "jsw_lat_mm": (4.5, 5.5),
        "osteophyte_max_size_mm": (0.0, 0.0),
        "osteophyte_count": (0, 0),
        "sclerosis_factor": (1.0, 1.0),
        "varus_valgus_deg": (-1.0, 1.0),
    },
    1: {
        "jsw_med_mm": (3.5, 5.0),
        "jsw_lat_mm": (4.0, 5.5),
        "osteophyte_max_size_mm": (0.0, 1.5),
        "osteophyte_count": (0, 2),
        "sclerosis_factor": (1.0, 1.3),
        "varus_valgus_deg": (-3.0, 3.0),
    },
    2: {
        "jsw_med_mm": (2.5, 4.0),
        "jsw_lat_mm": (3.5, 5.0),
        "osteophyte_max_size_mm": (1.0, 3.0),
        "osteophyte_count": (1, 4),
        "sclerosis_factor": (1.2, 1.6),
        "varus_valgus_deg": (-5.0, 5.0),
    },
}

# Grade-independent shape descriptors.  These are modelling defaults chosen to
# give adult-sized bones, not measured values.
SHAPE_RANGES = {
    "condyle_width_mm": (32.0, 38.0),
    "condyle_height_mm": (28.0, 34.0),
    "plateau_width_mm": (72.0, 80.0),
}


@dataclass(frozen=True)
class Osteophyte:
    site: str
    size_mm: float


@dataclass(frozen=True)
class KneeMorphology:
    kl_grade: int
    jsw_med_mm: float
    jsw_lat_mm: float
    osteophyte_count: int
    osteophyte_max_size_mm: float
    osteophyte_sites: tuple = ()
    sclerosis_factor: float = 1.0
    varus_valgus_deg: float = 0.0
    condyle_width_mm: float = 35.0
    condyle_height_mm: float = 31.0
    plateau_width_mm: float = 76.0
    side: str = "right"

    def validate(self, check_ranges: bool = True) -> "KneeMorphology":
        if self.kl_grade not in GRADE_RANGES:
            raise InvalidGradeError(f"kl_grade must be 0, 1 or 2, got {self.kl_grade!r}")
        if self.side not in SIDES:
            raise InvariantViolationError(f"side must be left/right, got {self.side!r}")
        if not (self.jsw_med_mm > 0 and self.jsw_lat_mm > 0):
            raise InvariantViolationError("joint space widths must be positive")
        if self.osteophyte_count < 0 or self.osteophyte_max_size_mm < 0:
            raise InvariantViolationError("osteophyte count/size must be non-negative")
        if len(self.osteophyte_sites) != self.osteophyte_count:
            raise InvariantViolationError("len(osteophyte_sites) != osteophyte_count")
        for o in self.osteophyte_sites:
            if o.site not in SITES:
                raise InvariantViolationError(f"unknown osteophyte site {o.site!r}")
            if not 0 <= o.size_mm <= self.osteophyte_max_size_mm + 1e-12:
                raise InvariantViolationError("per-site osteophyte size exceeds the maximum")
        if self.sclerosis_factor < 1.0:
            raise InvariantViolationError("sclerosis_factor must be >= 1")
        if min(self.condyle_width_mm, self.condyle_height_mm, self.plateau_width_mm) <= 0:
            raise InvariantViolationError("shape descriptors must be positive")
        if self.kl_grade == 0 and (
            self.osteophyte_count or self.osteophyte_max_size_mm or self.sclerosis_factor != 1.0
        ):
            raise InvariantViolationError("grade 0 requires no osteophytes and baseline sclerosis")
        if check_ranges:
            for name, (lo, hi) in GRADE_RANGES[self.kl_grade].items():
                v = getattr(self, name)
                if not lo <= v <= hi:
                    raise InvariantViolationError(f"{name}={v} outside [{lo}, {hi}] for grade {self.kl_grade}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["osteophyte_sites"] = [{"site": o.site, "size_mm": o.size_mm} for o in self.osteophyte_sites]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KneeMorphology":
        d = dict(d)
        d["osteophyte_sites"] = tuple(
            Osteophyte(o["site"], float(o["size_mm"])) for o in d.get("osteophyte_sites", ())
        )
        return cls(**d)


def sample_morphology(
    grade: int,
    rng: np.random.Generator,
    side: Optional[str] = None,
    shape_ranges: dict = SHAPE_RANGES,
) -> KneeMorphology:
    """Draw one knee uniformly from the grade's parameter box.

    The osteophyte count is drawn first; a count of zero forces a zero
    maximal size.  Sites are chosen without replacement, and counts above
    three stack extra bumps on sites already chosen.
    """
    if grade not in GRADE_RANGES:
        raise InvalidGradeError(f"grade must be 0, 1 or 2, got {grade!r}")
    r = GRADE_RANGES[grade]

    def uniform(key):
        lo, hi = r[key]
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    jsw_med = uniform("jsw_med_mm")
    jsw_lat = uniform("jsw_lat_mm")
    lo, hi = r["osteophyte_count"]
    count = int(rng.integers(lo, hi + 1))
    max_size = uniform("osteophyte_max_size_mm") if count > 0 else 0.0

    order = list(rng.permutation(len(SITES)))
    chosen = order[: min(count, len(SITES))]
    while len(chosen) < count:
        chosen.append(chosen[int(rng.integers(0, min(count, len(SITES))))])
    sizes = [max_size] + [float(rng.uniform(0.5 * max_size, max_size)) for _ in range(count - 1)]
    sites = tuple(Osteophyte(SITES[i], s) for i, s in zip(chosen, sizes))

    sclerosis = uniform("sclerosis_factor")
    varus = uniform("varus_valgus_deg")
    cw = float(rng.uniform(*shape_ranges["condyle_width_mm"]))
    ch = float(rng.uniform(*shape_ranges["condyle_height_mm"]))
    pw = float(rng.uniform(*shape_ranges["plateau_width_mm"]))
    drawn_side = SIDES[int(rng.integers(0, 2))]

    m = KneeMorphology(
        kl_grade=grade,
        jsw_med_mm=jsw_med,
        jsw_lat_mm=jsw_lat,
        osteophyte_count=count,
        osteophyte_max_size_mm=max_size,
        osteophyte_sites=sites,
        sclerosis_factor=sclerosis,
        varus_valgus_deg=varus,
        condyle_width_mm=cw,
        condyle_height_mm=ch,
        plateau_width_mm=pw,
        side=side if side is not None else drawn_side,
    )
    return m.validate()


@dataclass(frozen=True)
class Anatomy:
    """Fixed geometric constants of the knee model (millimetres)."""

    depth_ratio: float = 0.8
    envelope_depth_ratio: float = 0.8
    envelope_half_width_mm: float = 68.0
    notch_half_width_mm: float = 8.0
    femoral_shaft_half_mm: float = 16.0
    metaphysis_height_mm: float = 45.0
    tibial_shaft_half_mm: float = 16.0
    plateau_height_mm: float = 12.0
    plateau_corner_mm: float = 4.0
    tibial_taper_mm: float = 40.0
    spine_offset_mm: float = 5.0
    spine_height_mm: float = 4.0
    spine_half_base_mm: float = 3.0
    cortex_mm: float = 1.5
    plate_mm: float = 2.0
    plate_band_mm: float = 10.0
    osteophyte_angle_deg: float = 40.0
    epiphysis_extent_mm: float = 55.0
    supersample: int = 2


DEFAULT_ANATOMY = Anatomy()


@dataclass
class MaterialThicknessMap:
    """Per-material path lengths (mm) on a raster, plus a density multiplier.

    ``canonical_to_px`` is the 2x3 affine taking canonical (x, y) mm to raster
    (col, row) including rotation and mirroring.
    """

    width_px: int
    height_px: int
    pixel_mm: float
    thickness: dict
    density: np.ndarray
    joint_center_px: tuple
    contact_px: dict = field(default_factory=dict)
    anatomy_box_px: tuple = (0.0, 0.0, 0.0, 0.0)
    canonical_to_px: np.ndarray = field(default_factory=lambda: np.eye(2, 3))

    @property
    def bone(self) -> np.ndarray:
        return self.thickness["cortical_bone"] + self.thickness["trabecular_bone"]

    def validate(self) -> "MaterialThicknessMap":
        shape = (self.height_px, self.width_px)
        for name in MATERIALS:
            t = self.thickness[name]
            if t.shape != shape:
                raise InvariantViolationError(f"{name} raster shape {t.shape} != {shape}")
            if not np.all(np.isfinite(t)) or np.any(t < 0):
                raise InvariantViolationError(f"{name} thickness must be finite and >= 0")
        if self.density.shape != shape:
            raise InvariantViolationError("density raster shape mismatch")
        return self


def _run_chords(mask: np.ndarray, step_mm: float, ratio: float) -> np.ndarray:
    """Elliptical chord length (mm) of each pixel's horizontal run."""
    _, w = mask.shape
    idx = np.arange(w)[None, :]
    prev = np.zeros_like(mask)
    prev[:, 1:] = mask[:, :-1]
    nxt = np.zeros_like(mask)
    nxt[:, :-1] = mask[:, 1:]
    left = np.where(mask & ~prev, idx, -1)
    np.maximum.accumulate(left, axis=1, out=left)
    right = np.where(mask & ~nxt, idx, w)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]
    u = (idx - left + 0.5) * step_mm
    width = (right - left + 1) * step_mm
    chord = 2.0 * ratio * np.sqrt(np.clip(u * (width - u), 0.0, None))
    return np.where(mask, chord, 0.0)


def site_anchors(m: KneeMorphology, anatomy: Anatomy = DEFAULT_ANATOMY) -> dict:
    """Canonical-frame anchor point and outward unit normal of each site."""
    a = m.condyle_width_mm / 2
    b = m.condyle_height_mm / 2
    xm = anatomy.notch_half_width_mm + a
    phi = np.deg2rad(anatomy.osteophyte_angle_deg)
    out = {}
    for site, sign, jsw in (("medial_femoral", 1.0, m.jsw_med_mm), ("lateral_femoral", -1.0, m.jsw_lat_mm)):
        yc = -jsw - b
        p = np.array([sign * (xm + a * np.cos(phi)), yc + b * np.sin(phi)])
        n = np.array([sign * np.cos(phi) / a, np.sin(phi) / b])
        out[site] = (p, n / np.linalg.norm(n))
    out["tibial_spine"] = (
        np.array([anatomy.spine_offset_mm, -anatomy.spine_height_mm]),
        np.array([0.0, -1.0]),
    )
    return out


def _canonical_masks(m: KneeMorphology, anatomy: Anatomy, X: np.ndarray, Y: np.ndarray):
    a = m.condyle_width_mm / 2
    b = m.condyle_height_mm / 2
    xm = anatomy.notch_half_width_mm + a
    yc_med = -m.jsw_med_mm - b
    yc_lat = -m.jsw_lat_mm - b

    femur = ((X - xm) / a) ** 2 + ((Y - yc_med) / b) ** 2 <= 1.0
    femur |= ((X + xm) / a) ** 2 + ((Y - yc_lat) / b) ** 2 <= 1.0
    y_bot = min(yc_med, yc_lat)
    y_top = y_bot - anatomy.metaphysis_height_mm
    frac = np.clip((Y - y_top) / anatomy.metaphysis_height_mm, 0.0, 1.0)
    half = anatomy.femoral_shaft_half_mm + (xm + a - anatomy.femoral_shaft_half_mm) * frac
    femur |= (Y <= y_bot) & (np.abs(X) <= half)

    hw = m.plateau_width_mm / 2
    rc = anatomy.plateau_corner_mm
    ph = anatomy.plateau_height_mm
    frac = np.clip((Y - ph) / anatomy.tibial_taper_mm, 0.0, 1.0)
    half = hw + (anatomy.tibial_shaft_half_mm - hw) * frac
    tibia = (Y >= 0) & (np.abs(X) <= half)
    corner = (np.abs(X) > hw - rc) & (Y < rc) & ((np.abs(X) - (hw - rc)) ** 2 + (Y - rc) ** 2 > rc**2)
    tibia &= ~corner
    for x0 in (anatomy.spine_offset_mm, -anatomy.spine_offset_mm):
        d = np.abs(X - x0)
        tibia |= (Y < 0) & (d <= anatomy.spine_half_base_mm) & (
            Y >= -anatomy.spine_height_mm * (1.0 - d / anatomy.spine_half_base_mm)
        )

    anchors = site_anchors(m, anatomy)
    placed = {}
    for o in m.osteophyte_sites:
        p, n = anchors[o.site]
        k = placed.get(o.site, 0)
        placed[o.site] = k + 1
        if k:
            # stacked bump: slide along the contour tangent
            t = np.array([-n[1], n[0]])
            p = p + t * 1.5 * o.size_mm * ((k + 1) // 2) * (1 if k % 2 else -1)
        bump = (X - p[0]) ** 2 + (Y - p[1]) ** 2 <= o.size_mm**2
        if o.site == "tibial_spine":
            tibia |= bump
        else:
            femur |= bump

    band = (Y >= -max(m.jsw_med_mm, m.jsw_lat_mm) - anatomy.plate_band_mm) & (Y <= anatomy.plate_band_mm)
    return femur | tibia, band


def build_phantom(
    m: KneeMorphology,
    pixel_mm: float,
    width_px: int,
    height_px: int,
    anatomy: Anatomy = DEFAULT_ANATOMY,
) -> MaterialThicknessMap:
    """Rasterise a morphology into cortical/trabecular/soft-tissue path lengths.

    The knee origin is placed at the raster centre.  Geometry is evaluated on
    a ``supersample``-times finer grid, rotated there, then box-averaged, so
    edges carry partial-pixel thickness.
    """
    if pixel_mm <= 0:
        raise GeometryOverflowError("pixel_mm must be positive")
    m.validate(check_ranges=False)
    half_w = width_px * pixel_mm / 2
    half_h = height_px * pixel_mm / 2
    if anatomy.envelope_half_width_mm + pixel_mm > half_w:
        raise GeometryOverflowError(
            f"limb envelope ({2 * anatomy.envelope_half_width_mm:.0f} mm) exceeds raster width "
            f"({2 * half_w:.1f} mm)"
        )
    if anatomy.epiphysis_extent_mm > half_h:
        raise GeometryOverflowError(f"joint region exceeds raster height ({2 * half_h:.1f} mm)")

    s = int(anatomy.supersample)
    h = pixel_mm / s
    cx = (width_px - 1) / 2
    cy = (height_px - 1) / 2
    theta = np.deg2rad(m.varus_valgus_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    # Bone lives in a narrow column band; work on that band only, padded so
    # the rotated shafts stay inside it.
    a = m.condyle_width_mm / 2
    xm = anatomy.notch_half_width_mm + a
    reach = max(xm + a, m.plateau_width_mm / 2) + m.osteophyte_max_size_mm * 1.5 + 2 * pixel_mm
    pad = abs(sin_t) * height_px * pixel_mm + 2 * pixel_mm
    col_lo = max(0, int(np.floor((cx - (reach + pad) / pixel_mm))))
    col_hi = min(width_px, int(np.ceil(cx + (reach + pad) / pixel_mm)) + 1)
    ncols = col_hi - col_lo
    xs = ((np.arange(col_lo * s, col_hi * s) + 0.5) / s - 0.5 - cx) * pixel_mm
    ys = ((np.arange(height_px * s) + 0.5) / s - 0.5 - cy) * pixel_mm
    X = xs[None, :]
    Y = ys[:, None]

    bone, band = _canonical_masks(m, anatomy, X, Y)
    dist = ndimage.distance_transform_edt(bone) * h
    plate_t = anatomy.plate_mm * m.sclerosis_factor
    interior = bone & (dist > np.where(band, plate_t, anatomy.cortex_mm))
    plate = bone & band & (dist <= plate_t)
    trab = _run_chords(interior, h, anatomy.depth_ratio)
    cortical = _run_chords(bone, h, anatomy.depth_ratio) - trab
    density = 1.0 + (m.sclerosis_factor - 1.0) * plate

    # canonical mm -> output raster px, before rotation
    base = np.array([[1 / pixel_mm, 0.0, cx], [0.0, 1 / pixel_mm, cy]])
    jc_canon = np.array([xm, -m.jsw_med_mm / 2])
    jc = base[:, :2] @ jc_canon + base[:, 2]

    fields = [cortical, trab, density]
    if theta != 0.0:
        jc_hr = (jc[::-1] + 0.5) * s - 0.5 - np.array([0.0, col_lo * s])  # (row, col) in the crop
        mat = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
        offset = jc_hr - mat @ jc_hr
        fields = [
            ndimage.affine_transform(f, mat, offset=offset, order=1, mode="constant", cval=cval)
            for f, cval in zip(fields, (0.0, 0.0, 1.0))
        ]
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    affine = np.zeros((2, 3))
    affine[:, :2] = rot @ base[:, :2]
    affine[:, 2] = rot @ (base[:, 2] - jc) + jc

    def block(f, ncol):
        return f.reshape(height_px, s, ncol, s).mean(axis=(1, 3))

    cortical = np.zeros((height_px, width_px))
    trab = np.zeros((height_px, width_px))
    density = np.ones((height_px, width_px))
    for full, f in zip((cortical, trab, density), fields):
        full[:, col_lo:col_hi] = block(f, ncols)
    np.clip(cortical, 0.0, None, out=cortical)
    np.clip(trab, 0.0, None, out=trab)
    np.maximum(density, 1.0, out=density)

    # Soft-tissue envelope: an infinite vertical elliptic cylinder, evaluated
    # analytically in the rotated frame on the fine grid.
    xf = ((np.arange(width_px * s) + 0.5) / s - 0.5 - cx) * pixel_mm
    dx = xf[None, :] - jc_canon[0]
    dy = ys[:, None] - jc_canon[1]
    xc = jc_canon[0] + cos_t * dx + sin_t * dy
    e = anatomy.envelope_half_width_mm
    env = 2 * anatomy.envelope_depth_ratio * np.sqrt(np.clip(e * e - xc * xc, 0.0, None))
    soft = np.clip(block(env, width_px) - cortical - trab, 0.0, None)

    if m.side == "left":
        cortical, trab, soft, density = (np.ascontiguousarray(f[:, ::-1]) for f in (cortical, trab, soft, density))
        flip = np.diag([-1.0, 1.0])
        affine = np.c_[flip @ affine[:, :2], flip @ affine[:, 2] + np.array([width_px - 1, 0.0])]

    def to_px(pt):
        return tuple(float(v) for v in affine[:, :2] @ np.asarray(pt) + affine[:, 2])

    contact = {
        "medial": to_px((xm, -m.jsw_med_mm)),
        "lateral": to_px((-xm, -m.jsw_lat_mm)),
    }
    bone_out = (cortical + trab) > 0
    rows = np.arange(height_px)[:, None]
    jcx, jcy = to_px(jc_canon)
    window = bone_out & (np.abs(rows - jcy) * pixel_mm <= anatomy.epiphysis_extent_mm)
    if window.any():
        r_idx = np.flatnonzero(window.any(axis=1))
        c_idx = np.flatnonzero(window.any(axis=0))
        box = (float(c_idx[0]), float(r_idx[0]), float(c_idx[-1]), float(r_idx[-1]))
    else:
        box = (jcx, jcy, jcx, jcy)

    return MaterialThicknessMap(
        width_px=width_px,
        height_px=height_px,
        pixel_mm=pixel_mm,
        thickness={"cortical_bone": cortical, "trabecular_bone": trab, "soft_tissue": soft},
        density=density,
        joint_center_px=(jcx, jcy),
        contact_px=contact,
        anatomy_box_px=box,
        canonical_to_px=affine,
    ).validate()
