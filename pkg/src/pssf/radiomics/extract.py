"""Per-image feature vectors, the feature matrix, its CSV form and pruning."""

from __future__ import annotations

import csv
import io as _io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError, DegenerateRoiError, PSSFError, SchemaError
from ..io import atomic_write_text, read_json, read_png16, sha256_file, write_json
from .firstorder import FIRST_ORDER_NAMES, first_order
from .preprocess import crop, preprocess_array
from .roi import RoiBox, locate_roi, packaged_template
from .shape import SHAPE_NAMES, ShapeUnavailable, shape_features
from .texture import DIRECTIONS, FAMILIES, FAMILY_NAMES

log = logging.getLogger(__name__)

FAMILY_ORDER = ("first_order", "shape", "glcm", "glrlm", "glszm", "ngtdm", "gldm")
KEY_COLUMNS = ("knee_id", "protocol", "repeat")
MAX_ROW_FAILURE = 0.02
MAX_SHAPE_MISSING = 0.05


def feature_columns() -> list:
    """(column name, family) in the fixed matrix order."""
    names = {"first_order": FIRST_ORDER_NAMES, "shape": SHAPE_NAMES, **FAMILY_NAMES}
    return [(f"{fam}_{n}", fam) for fam in FAMILY_ORDER for n in names[fam]]


@dataclass
class ExtractConfig:
    n_bins: int = 32
    roi_px: int = 128
    pixel_mm: float = 0.6
    profile: str = "desk"
    template_path: Optional[str] = None
    prune_threshold: float = 0.9

    def template(self) -> np.ndarray:
        if self.template_path:
            return np.load(self.template_path).astype(np.float64)
        return packaged_template(self.profile)

    def echo(self) -> dict:
        d = asdict(self)
        d.update(
            directions_deg=[0, 45, 90, 135],
            direction_steps=[list(s) for s in DIRECTIONS],
            glszm_connectivity=8,
            neighbourhood="chebyshev-1",
            gldm_alpha=0,
            z_clamp=3.0,
        )
        return d


def image_features(
    image: np.ndarray,
    cfg: ExtractConfig,
    template: np.ndarray,
    fallback_center=None,
    side: Optional[str] = None,
):
    """Feature dict (NaN for unavailable shape features) and the ROI used."""
    box = locate_roi(image, template, cfg.roi_px, fallback_center, side=side)
    raw = crop(image, box)
    roi = preprocess_array(raw, cfg.n_bins)
    out = {f"first_order_{k}": v for k, v in first_order(roi.levels, roi.z, cfg.n_bins).items()}
    try:
        shp = shape_features(raw, cfg.pixel_mm)
    except ShapeUnavailable as exc:
        log.info("shape features unavailable: %s", exc)
        shp = {k: float("nan") for k in SHAPE_NAMES}
    out.update({f"shape_{k}": v for k, v in shp.items()})
    for fam, fn in FAMILIES.items():
        out.update({f"{fam}_{k}": v for k, v in fn(roi.levels, cfg.n_bins).items()})
    return out, box


@dataclass
class FeatureMatrix:
    keys: list  # (knee_id, protocol, repeat)
    columns: list
    families: dict  # column -> family
    values: np.ndarray  # rows x columns, float64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.keys), len(self.columns))

    def index(self) -> dict:
        return {k: i for i, k in enumerate(self.keys)}

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=int)
        return FeatureMatrix([self.keys[i] for i in rows], list(self.columns), dict(self.families), self.values[rows], dict(self.meta))

    def select_columns(self, cols) -> "FeatureMatrix":
        pos = {c: i for i, c in enumerate(self.columns)}
        missing = [c for c in cols if c not in pos]
        if missing:
            raise SchemaError(f"unknown feature columns: {missing[:5]}")
        idx = [pos[c] for c in cols]
        return FeatureMatrix(list(self.keys), list(cols), {c: self.families[c] for c in cols}, self.values[:, idx], dict(self.meta))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def sorted(self) -> "FeatureMatrix":
        order = sorted(range(len(self.keys)), key=lambda i: self.keys[i])
        return self.take(order)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_matrix(path, fm: FeatureMatrix, config: Optional[dict] = None) -> None:
    """CSV with key columns then features; sidecar ``<path>.json`` with config and families."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(KEY_COLUMNS) + list(fm.columns))
    for key, row in zip(fm.keys, fm.values):
        w.writerow([key[0], key[1], int(key[2])] + [_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())
    side = {"columns": fm.columns, "families": fm.families, "config": config or {}, **fm.meta}
    write_json(Path(str(path) + ".json"), side)


def read_matrix(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:3]) != KEY_COLUMNS:
        raise SchemaError(f"{path}: missing key columns {KEY_COLUMNS}")
    cols = rows[0][3:]
    keys = [(r[0], r[1], int(r[2])) for r in rows[1:]]
    vals = np.array([[float(v) for v in r[3:]] for r in rows[1:]], dtype=np.float64).reshape(len(keys), len(cols))
    side_path = Path(str(path) + ".json")
    fams, meta = {}, {}
    if side_path.exists():
        side = read_json(side_path)
        fams = side.get("families", {})
        meta = {k: v for k, v in side.items() if k not in ("columns", "families")}
    fams = {c: fams.get(c, c.split("_")[0]) for c in cols}
    return FeatureMatrix(keys, cols, fams, vals, meta)


def _extract_one(job):
    path, checksum, jc, side, cfg, template = job
    try:
        if checksum is not None and sha256_file(path) != checksum:
            raise DataError(f"checksum mismatch for {path}")
        img = read_png16(path)
        feats, box = image_features(img, cfg, template, jc, side)
        return feats, asdict(box), None
    except (PSSFError, OSError, ValueError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"


def extract_matrix(manifest, image_dir, cfg: ExtractConfig = ExtractConfig(), jobs: int = 1, records=None):
    """One row per manifest record, in manifest order.

    Returns ``(FeatureMatrix, report)``.  Rows that fail are dropped and listed
    in ``report["failures"]``; more than 2% failures raises ``DataError``.
    Shape columns missing in more than 5% of rows are dropped, remaining gaps
    take the column median.
    """
    image_dir = Path(image_dir)
    records = manifest.records if records is None else records
    template = cfg.template()
    jobs_list = [
        (image_dir / r.image_path, r.checksum, r.joint_center_px, r.side, cfg, template) for r in records
    ]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_one, jobs_list, chunksize=8))
    else:
        results = [_extract_one(j) for j in jobs_list]

    cols = feature_columns()
    names = [c for c, _ in cols]
    keys, rows, rois, failures = [], [], [], []
    for rec, (feats, box, err) in zip(records, results):
        if err is not None:
            failures.append({"knee_id": rec.knee_id, "protocol": rec.protocol_name, "repeat": rec.repeat_index,
                             "image_path": rec.image_path, "reason": err})
            log.warning("dropping %s: %s", rec.image_path, err)
            continue
        keys.append((rec.knee_id, rec.protocol_name, rec.repeat_index))
        rows.append([feats[n] for n in names])
        rois.append({"key": list(keys[-1]), **box})
    report = {"failures": failures, "n_records": len(records), "rois": rois}
    if records and len(failures) > MAX_ROW_FAILURE * len(records):
        raise DataError(
            f"{len(failures)} of {len(records)} rows failed extraction",
        )
    values = np.array(rows, dtype=np.float64).reshape(len(keys), len(names))
    keep = np.ones(len(names), dtype=bool)
    dropped = []
    for j, (name, fam) in enumerate(cols):
        miss = np.isnan(values[:, j])
        if not miss.any():
            continue
        if fam != "shape" or miss.mean() > MAX_SHAPE_MISSING:
            keep[j] = False
            dropped.append({"column": name, "missing_fraction": float(miss.mean())})
        else:
            values[miss, j] = np.median(values[~miss, j])
    report["dropped_columns"] = dropped
    report["imputed_shape_rows"] = int(sum(1 for r in rows if np.isnan(r[names.index("shape_gap_mm")])))
    fm = FeatureMatrix(keys, [n for n, k in zip(names, keep) if k], {n: f for n, f in cols}, values[:, keep])
    fm.families = {c: fm.families[c] for c in fm.columns}
    if not np.all(np.isfinite(fm.values)):
        raise DegenerateRoiError("non-finite feature values after extraction")
    return fm, report


def is_constant(x: np.ndarray) -> bool:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    return not sd > 1e-9 * max(1.0, float(np.abs(x).max()))


def prune_correlated(values: np.ndarray, columns: list, threshold: float = 0.9):
    """Greedy |Pearson rho| pruning in column order.

    ``values`` are the (training) rows to measure correlation on.  Returns
    ``(kept, dropped)`` where dropped is a list of ``(column, reason)``.
    """
    X = np.asarray(values, dtype=np.float64)
    if X.shape[0] < 2:
        raise DataError("correlation pruning needs at least two rows")
    kept, kept_idx, dropped = [], [], []
    Z = np.zeros_like(X)
    for j, name in enumerate(columns):
        x = X[:, j]
        if is_constant(x):
            dropped.append((name, "constant"))
            continue
        z = (x - x.mean()) / x.std()
        Z[:, j] = z
        if kept_idx:
            rho = np.abs(Z[:, kept_idx].T @ z) / len(z)
            k = int(np.argmax(rho))
            if rho[k] > threshold:
                dropped.append((name, f"|rho|={rho[k]:.4f} with {kept[k]}"))
                continue
        kept.append(name)
        kept_idx.append(j)
    return kept, dropped
