"""Radiographic imaging chain: geometry, attenuation, scatter, detector.

Polarity convention: digital numbers are proportional to transmission, so
bone is dark and air is bright (``invert_polarity`` flips this).  The gain
is fixed, ``DN = round(transmission * 60000)``, identical for every image,
so intensities stay comparable across protocols.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import GeometryOverflowError, InvariantViolationError, ParameterError, ShapeError
from .phantom import DEFAULT_ANATOMY, MATERIALS, Anatomy, KneeMorphology, MaterialThicknessMap, build_phantom
from .physics import AttenuationTable, EnergySpectrum, Physics

DN_GAIN = 60000.0
DN_MAX = 65535
PROTOCOL_NAMES = ("reference", "low_dose", "geometry_shift")

# Detector resolution profiles.  "full" is the native 2048 x 0.15 mm panel;
# "desk" keeps the same physical field with 4x coarser pixels.
PROFILES = {
    "desk": {"fov_px": 512, "pixel_mm": 0.6, "roi_px": 128, "template_px": 128},
    "full": {"fov_px": 2048, "pixel_mm": 0.15, "roi_px": 512, "template_px": 512},
}
# Blur widths at full resolution; other profiles scale them by pixel pitch.
FULL_PIXEL_MM = 0.15
SCATTER_SIGMA_FULL_PX = 40.0
PSF_SIGMA_FULL_PX = 2.0


@dataclass(frozen=True)
class AcquisitionProtocol:
    name: str
    kvp: float = 70.0
    mas_rel: float = 1.0
    sdd_cm: float = 115.0
    sod_cm: float = 95.0
    beam_angle_deg: float = 0.0
    fov_px: int = 512
    pixel_mm: float = 0.6
    photons_ref: float = 10000.0
    scatter_fraction: float = 0.15
    scatter_sigma_px: float = 10.0
    psf_sigma_px: float = 0.5
    readout_sigma_dn: float = 20.0
    invert_polarity: bool = False

    def __post_init__(self):
        if self.name not in PROTOCOL_NAMES:
            raise ParameterError(f"unknown protocol name {self.name!r}")
        if not 60.0 <= self.kvp <= 80.0:
            raise ParameterError("kvp must lie in [60, 80]")
        if not (110.0 <= self.sdd_cm <= 120.0 and 90.0 <= self.sod_cm <= 100.0):
            raise ParameterError("sdd_cm must lie in [110, 120] and sod_cm in [90, 100]")
        if not self.sdd_cm > self.sod_cm or not 1.0 < self.magnification <= 1.34:
            raise ParameterError("magnification sdd/sod must lie in (1, 1.34]")
        if self.mas_rel <= 0 or not self.photons_ref > 0:
            raise ParameterError("mas_rel and photons_ref must be positive")
        if self.fov_px <= 0 or self.pixel_mm <= 0:
            raise ParameterError("detector size and pitch must be positive")
        if not 0.0 <= self.scatter_fraction < 1.0 or self.scatter_sigma_px <= 0:
            raise ParameterError("scatter_fraction must lie in [0, 1) and scatter_sigma_px > 0")
        if self.psf_sigma_px < 0 or self.readout_sigma_dn < 0:
            raise ParameterError("blur and readout sigmas must be non-negative")

    @property
    def magnification(self) -> float:
        return self.sdd_cm / self.sod_cm

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def make_protocols(profile: str = "desk", **overrides) -> list:
    """The reference, low-dose and geometry-shift protocols for a profile.

    ``overrides`` are applied to all three protocols (e.g. ``photons_ref``).
    """
    p = PROFILES[profile]
    scale = FULL_PIXEL_MM / p["pixel_mm"]
    common = dict(
        fov_px=p["fov_px"],
        pixel_mm=p["pixel_mm"],
        scatter_sigma_px=SCATTER_SIGMA_FULL_PX * scale,
        psf_sigma_px=PSF_SIGMA_FULL_PX * scale,
    )
    common.update(overrides)
    return [
        AcquisitionProtocol("reference", **common),
        AcquisitionProtocol("low_dose", **{**common, "mas_rel": 0.25}),
        AcquisitionProtocol("geometry_shift", **{**common, "sdd_cm": 118.0, "beam_angle_deg": 3.0}),
    ]


@dataclass
class Radiograph:
    pixels: np.ndarray  # uint16, fov x fov
    protocol: str
    seed: int
    knee_id: str
    joint_center_px: tuple

    def __post_init__(self):
        if self.pixels.dtype != np.uint16:
            raise InvariantViolationError("radiograph pixels must be uint16")
        h, w = self.pixels.shape
        x, y = self.joint_center_px
        if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
            raise InvariantViolationError("joint centre lies outside the image")


def transmit(
    tmap: MaterialThicknessMap,
    spectrum: EnergySpectrum,
    atten: AttenuationTable,
    density_raster: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Polyenergetic Beer-Lambert transmission, as a fraction of the open beam.

    ``out = sum_b w_b * exp(-d * sum_i mu_i(E_b) * t_i)``
    """
    density = tmap.density if density_raster is None else np.asarray(density_raster, dtype=float)
    shape = density.shape
    for name in MATERIALS:
        t = tmap.thickness[name]
        if t.shape != shape:
            raise ShapeError(f"{name} raster {t.shape} does not match density raster {shape}")
        if np.any(t < 0):
            raise InvariantViolationError(f"negative path length in {name}")
    out = np.zeros(shape)
    for energy, weight in zip(spectrum.energies_kev, spectrum.weights):
        line = np.zeros(shape)
        for name in MATERIALS:
            line += atten(name, energy) * tmap.thickness[name]
        out += weight * np.exp(-density * line)
    return out


def _affine_points(affine: np.ndarray, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return pts @ affine[:, :2].T + affine[:, 2]


def resample_to_detector(
    tmap: MaterialThicknessMap,
    magnification: float,
    beam_angle_deg: float,
    fov_px: int,
    pixel_mm: float,
) -> MaterialThicknessMap:
    """Scale about the raster centre and rotate about the joint centre.

    A phantom point ``p`` lands at ``c_d + s * R (p - j) + s * (j - c_p)`` with
    ``s = magnification * phantom pitch / detector pitch``.
    """
    s = magnification * tmap.pixel_mm / pixel_mm
    theta = np.deg2rad(beam_angle_deg)
    same_grid = (tmap.width_px, tmap.height_px) == (fov_px, fov_px)
    if s == 1.0 and theta == 0.0 and same_grid:
        return replace(
            tmap,
            thickness={k: v.copy() for k, v in tmap.thickness.items()},
            density=tmap.density.copy(),
            pixel_mm=pixel_mm,
        )

    c, sn = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -sn], [sn, c]])  # (x, y) order
    j = np.asarray(tmap.joint_center_px, dtype=float)
    cp = np.array([(tmap.width_px - 1) / 2, (tmap.height_px - 1) / 2])
    cd = np.array([(fov_px - 1) / 2, (fov_px - 1) / 2])
    fwd = np.zeros((2, 3))
    fwd[:, :2] = s * rot
    fwd[:, 2] = cd - s * rot @ j + s * (j - cp)

    box = tmap.anatomy_box_px
    corners = _affine_points(fwd, [(box[0], box[1]), (box[2], box[1]), (box[0], box[3]), (box[2], box[3])])
    if np.any(corners < 0) or np.any(corners > fov_px - 1):
        raise GeometryOverflowError("projected joint anatomy exceeds the detector field of view")

    # inverse map in (row, col) order for ndimage
    inv = np.linalg.inv(fwd[:, :2])
    mat = inv[::-1, ::-1]
    offset = (-inv @ fwd[:, 2])[::-1]

    def warp(img, cval):
        return ndimage.affine_transform(img, mat, offset=offset, output_shape=(fov_px, fov_px), order=1,
                                        mode="constant", cval=cval)

    thickness = {k: np.clip(warp(v, 0.0), 0.0, None) for k, v in tmap.thickness.items()}
    density = np.maximum(warp(tmap.density, 1.0), 1.0)
    jd = _affine_points(fwd, j)[0]
    new_box = corners.min(axis=0).tolist() + corners.max(axis=0).tolist()
    composed = np.c_[fwd[:, :2] @ tmap.canonical_to_px[:, :2], fwd[:, :2] @ tmap.canonical_to_px[:, 2] + fwd[:, 2]]
    return MaterialThicknessMap(
        width_px=fov_px,
        height_px=fov_px,
        pixel_mm=pixel_mm,
        thickness=thickness,
        density=density,
        joint_center_px=(float(jd[0]), float(jd[1])),
        contact_px={k: tuple(_affine_points(fwd, v)[0].tolist()) for k, v in tmap.contact_px.items()},
        anatomy_box_px=(new_box[0], new_box[1], new_box[2], new_box[3]),
        canonical_to_px=composed,
    )


def project_geometry(tmap: MaterialThicknessMap, protocol: AcquisitionProtocol) -> MaterialThicknessMap:
    return resample_to_detector(tmap, protocol.magnification, protocol.beam_angle_deg, protocol.fov_px,
                                protocol.pixel_mm)


def add_scatter(primary: np.ndarray, scatter_fraction: float, scatter_sigma_px: float) -> np.ndarray:
    """Mix in a broad, normalised Gaussian blur of the primary image."""
    if not 0.0 <= scatter_fraction < 1.0:
        raise ParameterError("scatter_fraction must lie in [0, 1)")
    if scatter_sigma_px <= 0:
        raise ParameterError("scatter_sigma_px must be positive")
    primary = np.asarray(primary, dtype=float)
    if scatter_fraction == 0.0:
        return primary.copy()
    blurred = ndimage.gaussian_filter(primary, scatter_sigma_px, mode="reflect")
    return (1.0 - scatter_fraction) * primary + scatter_fraction * blurred


def detect(
    intensity: np.ndarray,
    protocol: AcquisitionProtocol,
    rng: np.random.Generator,
    seed: int = 0,
    knee_id: str = "",
    joint_center_px: Optional[tuple] = None,
) -> Radiograph:
    """Detector model: PSF blur, Poisson quanta, fixed gain, readout noise, 16-bit clamp.

    ``photons_ref = inf`` skips the Poisson stage (noiseless limit).
    """
    if protocol.mas_rel <= 0 or not protocol.photons_ref > 0:
        raise ParameterError("photons_ref and mas_rel must be positive")
    img = np.asarray(intensity, dtype=float)
    if protocol.psf_sigma_px > 0:
        img = ndimage.gaussian_filter(img, protocol.psf_sigma_px, mode="reflect")
    budget = protocol.photons_ref * protocol.mas_rel
    if np.isfinite(budget):
        counts = rng.poisson(np.clip(img, 0.0, None) * budget)
        img = counts / budget
    dn = np.round(img * DN_GAIN)
    if protocol.readout_sigma_dn > 0:
        dn = np.round(dn + rng.normal(0.0, protocol.readout_sigma_dn, size=dn.shape))
    dn = np.clip(dn, 0, DN_MAX)
    if protocol.invert_polarity:
        dn = DN_MAX - dn
    if joint_center_px is None:
        joint_center_px = ((dn.shape[1] - 1) / 2, (dn.shape[0] - 1) / 2)
    return Radiograph(dn.astype(np.uint16), protocol.name, int(seed), knee_id, tuple(joint_center_px))


def simulate(
    m: KneeMorphology,
    protocol: AcquisitionProtocol,
    physics: Physics,
    seed: int,
    knee_id: str = "",
    phantom: Optional[MaterialThicknessMap] = None,
    anatomy: Anatomy = DEFAULT_ANATOMY,
) -> Radiograph:
    """Phantom -> detector geometry -> transmission -> scatter -> detector.

    ``phantom`` may be passed to reuse one rasterisation across protocols; it
    must have been built at the protocol's detector pitch and size.
    """
    if phantom is None:
        phantom = build_phantom(m, protocol.pixel_mm, protocol.fov_px, protocol.fov_px, anatomy)
    det = project_geometry(phantom, protocol)
    spectrum = physics.spectrum(protocol.kvp)
    spectrum.check_kvp(protocol.kvp)
    primary = transmit(det, spectrum, physics.attenuation)
    total = add_scatter(primary, protocol.scatter_fraction, protocol.scatter_sigma_px)
    rng = np.random.default_rng(seed)
    return detect(total, protocol, rng, seed=seed, knee_id=knee_id, joint_center_px=det.joint_center_px)
