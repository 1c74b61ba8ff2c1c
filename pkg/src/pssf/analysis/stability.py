"""Repeat acquisitions, ICC(2,1) reliability and the stable-feature screen."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cohort import CohortManifest, ManifestRecord, image_seed
from ..errors import MetricUndefinedError, ScenarioError
from ..radiomics.extract import is_constant
from ..seeding import substream

CONDITIONS = ("test_retest", "low_dose", "geometry_shift")
# condition -> protocol of its repeats; each table compares them to reference r0
CONDITION_PROTOCOL = {"test_retest": "reference", "low_dose": "low_dose", "geometry_shift": "geometry_shift"}


@dataclass
class RepeatConfig:
    subset_size: int = 30
    n_repeats: int = 3
    conditions: tuple = CONDITIONS
    angle_jitter_deg: float = 1.0
    sdd_jitter_cm: float = 2.0
    jitter_conditions: tuple = ("geometry_shift",)
    icc_threshold: float = 0.75


def choose_subset(manifest: CohortManifest, size: int, seed: int) -> list:
    knees = sorted(manifest.knees())
    if size > len(knees):
        raise ScenarioError(f"repeat subset of {size} exceeds {len(knees)} knees")
    pick = substream(seed, "repeats", "subset").permutation(len(knees))[:size]
    return sorted(knees[i] for i in pick)


def repeat_records(manifest: CohortManifest, cfg: RepeatConfig, seed: int) -> list:
    """Extra records: ``n_repeats`` re-renders per subset knee and condition.

    Repeats get fresh noise seeds; conditions in ``jitter_conditions`` also get
    a small uniform jitter of beam angle and source-detector distance.
    """
    subset = choose_subset(manifest, cfg.subset_size, seed)
    base = {(r.knee_id, r.protocol_name): r for r in manifest.records if r.repeat_index == 0}
    out = []
    for cond in cfg.conditions:
        proto_name = CONDITION_PROTOCOL[cond]
        if proto_name not in manifest.protocols:
            raise ScenarioError(f"condition {cond} needs protocol {proto_name}")
        proto = manifest.protocols[proto_name]
        for knee in subset:
            src = base.get((knee, "reference")) or next(r for (k, _), r in base.items() if k == knee)
            for i in range(1, cfg.n_repeats + 1):
                overrides = {}
                if cond in cfg.jitter_conditions:
                    rng = substream(seed, "repeats", "jitter", knee, cond, i)
                    overrides = {
                        "beam_angle_deg": float(proto.beam_angle_deg + rng.uniform(-1, 1) * cfg.angle_jitter_deg),
                        "sdd_cm": float(proto.sdd_cm + rng.uniform(-1, 1) * cfg.sdd_jitter_cm),
                    }
                out.append(
                    ManifestRecord(
                        subject_id=src.subject_id,
                        knee_id=knee,
                        side=src.side,
                        kl_grade=src.kl_grade,
                        morphology=src.morphology,
                        protocol_name=proto_name,
                        image_path=f"images/repeats/{knee}_{proto_name}_r{i}.png",
                        image_seed=image_seed(seed, knee, proto_name, i),
                        repeat_index=i,
                        protocol_overrides=overrides,
                    )
                )
    return out


def condition_keys(cond: str, n_repeats: int) -> list:
    """Row keys (protocol, repeat) forming the columns of a condition's table."""
    p = CONDITION_PROTOCOL[cond]
    return [("reference", 0)] + [(p, i) for i in range(1, n_repeats + 1)]


def compute_icc(table) -> dict:
    """ICC(2,1): two-way random effects, absolute agreement, single measurement.

    ``table`` is subjects x conditions.  Returns the ICC (clipped to [-1, 1])
    with mean squares and variance components (subject, condition, residual).
    """
    Y = np.asarray(table, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] < 5 or Y.shape[1] < 2:
        raise MetricUndefinedError("ICC needs at least 5 subjects and 2 conditions")
    if not np.all(np.isfinite(Y)):
        raise MetricUndefinedError("ICC table has missing values")
    n, k = Y.shape
    grand = Y.mean()
    ss_total = np.sum((Y - grand) ** 2)
    if is_constant(Y.ravel()) or ss_total == 0:
        raise MetricUndefinedError("constant feature")
    ss_rows = k * np.sum((Y.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((Y.mean(axis=0) - grand) ** 2)
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    den = msr + (k - 1) * mse + k * (msc - mse) / n
    icc = (msr - mse) / den if den != 0 else 0.0
    return {
        "icc": float(np.clip(icc, -1.0, 1.0)),
        "ms_subject": float(msr),
        "ms_condition": float(msc),
        "ms_error": float(mse),
        "var_subject": float((msr - mse) / k),
        "var_condition": float((msc - mse) / n),
        "var_residual": float(mse),
    }


@dataclass
class StabilityReport:
    rows: list = field(default_factory=list)  # dicts: feature, family, condition, icc, components, stable, reason

    def icc(self, feature: str, condition: str):
        for r in self.rows:
            if r["feature"] == feature and r["condition"] == condition:
                return r["icc"]
        raise KeyError((feature, condition))

    def median_icc(self, condition: str, families) -> float:
        vals = [r["icc"] for r in self.rows if r["condition"] == condition and r["family"] in families and r["icc"] is not None]
        return float(np.median(vals)) if vals else float("nan")


def stability_report(fm, conditions, n_repeats: int, threshold: float = 0.75) -> StabilityReport:
    """ICC per feature and condition from a matrix holding base and repeat rows."""
    idx = fm.index()
    knees = sorted({k[0] for k in fm.keys if k[2] > 0})
    report = StabilityReport()
    for cond in conditions:
        cols = condition_keys(cond, n_repeats)
        present = [kn for kn in knees if all((kn, p, r) in idx for p, r in cols)]
        rows = np.array([[idx[(kn, p, r)] for p, r in cols] for kn in present], dtype=int).reshape(len(present), len(cols))
        for j, name in enumerate(fm.columns):
            entry = {"feature": name, "family": fm.families[name], "condition": cond, "n_subjects": len(present),
                     "n_conditions": len(cols)}
            try:
                res = compute_icc(fm.values[rows, j])
                entry.update(res, stable=bool(res["icc"] >= threshold), reason="")
            except MetricUndefinedError as exc:
                entry.update(icc=None, stable=False, reason=str(exc))
            report.rows.append(entry)
    return report


def stability_screen(report: StabilityReport, threshold: float = 0.75) -> list:
    """Features whose ICC reaches ``threshold`` in every evaluated condition set."""
    by_feat = {}
    for r in report.rows:
        ok = r["icc"] is not None and r["icc"] >= threshold
        by_feat[r["feature"]] = by_feat.get(r["feature"], True) and ok
    return [f for f, ok in by_feat.items() if ok]
