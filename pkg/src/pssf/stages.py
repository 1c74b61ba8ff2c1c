"""Pipeline stages with completion markers, and the end-to-end orchestrator.

Every stage writes its outputs under the run directory plus a marker
``.stages/<stage>.json`` holding the stage's config hash and the checksums of
its inputs and outputs.  A stage is skipped when its marker matches the
current config and files.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__
from .analysis.scenarios import SCENARIOS, RowTable, ordering_checks, run_scenario
from .analysis.stability import repeat_records, stability_report, stability_screen
from .cohort import CohortManifest, generate_cohort, render_cohort
from .config import RunConfig
from .errors import DataError, PSSFError, StageError
from .io import atomic_write_text, config_hash, read_json, sha256_file, write_json, write_provenance
from .ml.models import TrainedModel
from .ml.split import SplitPlan, split_subjects
from .physics import load_physics
from .radiomics.extract import FeatureMatrix, extract_matrix, read_matrix, write_matrix

log = logging.getLogger(__name__)

STAGES = ("simulate", "extract", "train", "evaluate", "stability")
STAGE_SECTIONS = {
    "simulate": ("cohort",),
    "extract": ("cohort", "radiomics"),
    "train": ("cohort", "radiomics", "ml"),
    "evaluate": ("cohort", "radiomics", "ml", "analysis"),
    "stability": ("cohort", "radiomics", "analysis"),
}
MANIFEST = "manifest.jsonl"
FEATURES = "features.csv"
SPLIT = "split.json"
REPEATS_MANIFEST = "repeats_manifest.jsonl"
REPEAT_FEATURES = "features_repeats.csv"
STABILITY = "stability.csv"


def stage_hash(cfg: RunConfig, stage: str) -> str:
    return config_hash({"stage": stage, **cfg.section_dict(*STAGE_SECTIONS[stage])})


def _checksums(out: Path, rels) -> dict:
    return {r: sha256_file(out / r) for r in sorted(rels)}


def _marker_path(out: Path, stage: str) -> Path:
    return out / ".stages" / f"{stage}.json"


def marker_valid(out: Path, stage: str, cfg_hash: str, inputs) -> bool:
    path = _marker_path(out, stage)
    if not path.exists():
        return False
    try:
        m = read_json(path)
        if m.get("config_hash") != cfg_hash or sorted(m.get("inputs", {})) != sorted(inputs):
            return False
        for group in ("inputs", "outputs"):
            for rel, digest in m.get(group, {}).items():
                p = out / rel
                if not p.exists() or sha256_file(p) != digest:
                    return False
    except (OSError, ValueError):
        return False
    return True


def write_marker(out: Path, stage: str, cfg_hash: str, inputs, outputs) -> None:
    write_json(
        _marker_path(out, stage),
        {
            "stage": stage,
            "config_hash": cfg_hash,
            "tool_version": __version__,
            "inputs": _checksums(out, inputs),
            "outputs": _checksums(out, outputs),
        },
    )


def _rel(out: Path, paths) -> list:
    return [str(Path(p).relative_to(out)) for p in paths]


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------- stages


def run_simulate(cfg: RunConfig, out: Path) -> list:
    physics = load_physics(cfg.physics_path)
    manifest = generate_cohort(cfg.cohort_spec())
    old = out / MANIFEST
    if old.exists():
        # reuse recorded checksums so unchanged images are skipped
        try:
            prev = {r.key: r for r in CohortManifest.load(old).records}
            for r in manifest.records:
                p = prev.get(r.key)
                if p is not None and p.image_seed == r.image_seed and p.morphology == r.morphology:
                    r.checksum, r.joint_center_px = p.checksum, p.joint_center_px
        except (OSError, ValueError, KeyError, PSSFError):
            pass
    summary = render_cohort(manifest, physics, out, jobs=cfg.jobs)
    if summary.failures:
        raise StageError("simulate", f"{len(summary.failures)} images failed to render",
                         [{"record": list(k), "reason": e} for k, e in summary.failures])
    h = stage_hash(cfg, "simulate")
    write_provenance(out / MANIFEST, "simulate", h, records=len(manifest.records))
    outputs = [MANIFEST, "manifest.meta.json"] + [r.image_path for r in manifest.records]
    return outputs


def verify_images(out: Path, manifest: CohortManifest, stage: str) -> None:
    bad = []
    for r in manifest.records:
        p = out / r.image_path
        if not p.exists():
            bad.append({"image_path": r.image_path, "reason": "missing"})
        elif r.checksum is None or sha256_file(p) != r.checksum:
            bad.append({"image_path": r.image_path, "reason": "checksum mismatch"})
    if bad:
        raise StageError(stage, f"{len(bad)} image(s) failed integrity checks", bad)


def _extract(cfg: RunConfig, out: Path, manifest: CohortManifest, stage: str, dest: str) -> FeatureMatrix:
    verify_images(out, manifest, stage)
    ecfg = cfg.extract_config()
    try:
        fm, report = extract_matrix(manifest, out, ecfg, jobs=cfg.jobs)
    except DataError as exc:
        raise StageError(stage, str(exc)) from exc
    write_matrix(out / dest, fm, ecfg.echo())
    write_json(out / (dest + ".report.json"), report)
    write_provenance(out / dest, stage, stage_hash(cfg, stage), rows=len(fm.keys), columns=len(fm.columns))
    return fm


def run_extract(cfg: RunConfig, out: Path) -> list:
    manifest = CohortManifest.load(out / MANIFEST)
    _extract(cfg, out, manifest, "extract", FEATURES)
    return [FEATURES, FEATURES + ".json", FEATURES + ".report.json"]


def _split(cfg: RunConfig, manifest: CohortManifest) -> SplitPlan:
    subjects = [r.subject_id for r in manifest.records]
    return split_subjects(subjects, tuple(cfg.ml.split_fractions), cfg.master_seed)


TRAIN_SETS = {"reference": ("reference",), "all": ("reference", "low_dose", "geometry_shift")}


def model_file(train_set: str, task: str, kind: str) -> str:
    return f"models/{train_set}__{task}__{kind}.json"


def run_train(cfg: RunConfig, out: Path) -> list:
    from .analysis.scenarios import train_models

    manifest = CohortManifest.load(out / MANIFEST)
    fm = read_matrix(out / FEATURES)
    split = _split(cfg, manifest)
    write_json(out / SPLIT, split.to_dict())
    table = RowTable(fm, manifest, split)
    mcfg = cfg.ml_config()
    h = stage_hash(cfg, "train")
    outputs = [SPLIT]
    present = set(table.protocol.tolist())
    for name, protos in TRAIN_SETS.items():
        if not set(protos) <= present:
            continue
        for task in mcfg.tasks:
            try:
                models = train_models(fm, table, protos, task, mcfg, cfg.master_seed)
            except PSSFError as exc:
                raise StageError("train", f"{name}/{task}: {exc}") from exc
            for kind, m in models.items():
                rel = model_file(name, task, kind)
                m.save(out / rel)
                write_provenance(out / rel, "train", h)
                outputs.append(rel)
    return outputs


REPORT_FIELDS = ("scenario", "task", "kind", "test_protocol", "auc", "balanced_accuracy", "macro_f1", "n")


def run_evaluate(cfg: RunConfig, out: Path) -> list:
    manifest = CohortManifest.load(out / MANIFEST)
    fm = read_matrix(out / FEATURES)
    split = SplitPlan.from_dict(read_json(out / SPLIT))
    table = RowTable(fm, manifest, split)
    mcfg = cfg.ml_config()
    h = stage_hash(cfg, "evaluate")
    models = {}
    for name, protos in TRAIN_SETS.items():
        for task in mcfg.tasks:
            found = {}
            for kind in mcfg.kinds:
                p = out / model_file(name, task, kind)
                if p.exists():
                    found[kind] = TrainedModel.load(p)
            if len(found) == len(mcfg.kinds):
                key = ("reference" if name == "reference" else "+".join(protos), task)
                models[key] = found
    outputs, all_reports = [], []
    for spec in SCENARIOS:
        try:
            reports, preds = run_scenario(spec, fm, manifest, split, mcfg, cfg.master_seed, models, table)
        except PSSFError as exc:
            raise StageError("evaluate", f"{spec.name}: {exc}") from exc
        all_reports += reports
        base = f"reports/{spec.name}"
        write_json(out / f"{base}.json", reports)
        rows = [[r[f] for f in REPORT_FIELDS] + [json.dumps(r["confusion_matrix"])] for r in reports]
        atomic_write_text(out / f"{base}.csv", _csv_text(list(REPORT_FIELDS) + ["confusion_matrix"], rows))
        write_provenance(out / f"{base}.csv", "evaluate", h)
        outputs += [f"{base}.json", f"{base}.csv"]
        for (scen, task, kind, tp), pr in sorted(preds.items()):
            rel = f"predictions/{scen}__{task}__{kind}__{tp}.csv"
            hdr = list(pr[0].keys()) if pr else ["knee_id"]
            atomic_write_text(out / rel, _csv_text(hdr, [[d[k] for k in hdr] for d in pr]))
            outputs.append(rel)
    imp_rows = []
    for (train_set, task), kinds in sorted(models.items()):
        for kind, m in sorted(kinds.items()):
            for rank, (feat, score) in enumerate(m.importance(), 1):
                imp_rows.append([train_set, task, kind, rank, feat, score])
    atomic_write_text(out / "importance.csv", _csv_text(["train_set", "task", "kind", "rank", "feature", "score"], imp_rows))
    write_provenance(out / "importance.csv", "evaluate", h)
    checks = ordering_checks(all_reports, cfg.analysis.ordering_slack)
    write_json(out / "summary.json", {"ordering_checks": checks, "all_pass": all(c["pass"] for c in checks),
                                      "config_hash": h})
    return outputs + ["importance.csv", "summary.json"]


def run_stability(cfg: RunConfig, out: Path) -> list:
    manifest = CohortManifest.load(out / MANIFEST)
    rcfg = cfg.repeat_config()
    reps = repeat_records(manifest, rcfg, cfg.master_seed)
    rep_manifest = CohortManifest(reps, manifest.master_seed, {**manifest.spec, "repeats": len(reps)}, manifest.protocols)
    old = out / REPEATS_MANIFEST
    if old.exists():
        try:
            prev = {r.key: r for r in CohortManifest.load(old).records}
            for r in rep_manifest.records:
                p = prev.get(r.key)
                if p is not None and p.image_seed == r.image_seed and p.protocol_overrides == r.protocol_overrides:
                    r.checksum, r.joint_center_px = p.checksum, p.joint_center_px
        except (OSError, ValueError, KeyError, PSSFError):
            pass
    summary = render_cohort(rep_manifest, load_physics(cfg.physics_path), out, jobs=cfg.jobs, manifest_name=REPEATS_MANIFEST)
    if summary.failures:
        raise StageError("stability", f"{len(summary.failures)} repeat images failed to render",
                         [{"record": list(k), "reason": e} for k, e in summary.failures])
    rep_fm = _extract(cfg, out, rep_manifest, "stability", REPEAT_FEATURES)
    base_fm = read_matrix(out / FEATURES)
    subset = {r.knee_id for r in reps}
    base_rows = [i for i, k in enumerate(base_fm.keys) if k[0] in subset and k[2] == 0]
    base_sub = base_fm.take(base_rows).select_columns(rep_fm.columns)
    combined = FeatureMatrix(base_sub.keys + rep_fm.keys, rep_fm.columns, rep_fm.families,
                             np.vstack([base_sub.values, rep_fm.values]))
    report = stability_report(combined, rcfg.conditions, rcfg.n_repeats, rcfg.icc_threshold)
    fields = ["feature", "family", "condition", "icc", "ms_subject", "ms_condition", "ms_error",
              "var_subject", "var_condition", "var_residual", "stable", "reason", "n_subjects", "n_conditions"]
    rows = [[r.get(f) if r.get(f) is not None else "" for f in fields] for r in report.rows]
    atomic_write_text(out / STABILITY, _csv_text(fields, rows))
    h = stage_hash(cfg, "stability")
    write_provenance(out / STABILITY, "stability", h)
    stable = stability_screen(report, rcfg.icc_threshold)
    families = sorted({r["family"] for r in report.rows})
    medians = {c: {f: report.median_icc(c, (f,)) for f in families} for c in rcfg.conditions}
    write_json(out / "stability_summary.json", {
        "stable_features": stable,
        "threshold": rcfg.icc_threshold,
        "median_icc": {c: {f: (None if np.isnan(v) else v) for f, v in d.items()} for c, d in medians.items()},
    })
    return [REPEATS_MANIFEST, "repeats_manifest.meta.json", REPEAT_FEATURES, REPEAT_FEATURES + ".json",
            REPEAT_FEATURES + ".report.json", STABILITY, "stability_summary.json"] + [r.image_path for r in reps]


RUNNERS = {
    "simulate": (run_simulate, []),
    "extract": (run_extract, [MANIFEST]),
    "train": (run_train, [MANIFEST, FEATURES]),
    "evaluate": (run_evaluate, None),  # inputs: features, split and models
    "stability": (run_stability, [MANIFEST, FEATURES]),
}


def _inputs(out: Path, stage: str) -> list:
    fixed = RUNNERS[stage][1]
    if fixed is not None:
        return fixed
    marker = _marker_path(out, "train")
    models = []
    if marker.exists():
        models = [k for k in read_json(marker).get("outputs", {}) if k.startswith("models/")]
    return [MANIFEST, FEATURES, SPLIT] + models


def run_stage(cfg: RunConfig, stage: str, force: bool = False) -> str:
    """Run one stage unless its marker is valid; returns "ran" or "skipped"."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = _inputs(out, stage)
    missing = [i for i in inputs if not (out / i).exists()]
    if missing:
        raise StageError(stage, f"missing inputs (run earlier stages first): {missing}", [{"path": m} for m in missing])
    h = stage_hash(cfg, stage)
    if not force and marker_valid(out, stage, h, inputs):
        log.info("stage %s: up to date, skipped", stage)
        return "skipped"
    _marker_path(out, stage).unlink(missing_ok=True)
    log.info("stage %s: running", stage)
    outputs = RUNNERS[stage][0](cfg, out)
    write_marker(out, stage, h, inputs, outputs)
    return "ran"


def run_pipeline(cfg: RunConfig) -> dict:
    return {stage: run_stage(cfg, stage) for stage in STAGES}


def write_error_report(out, exc: Exception) -> Path:
    out = Path(out)
    rep = {
        "stage": getattr(exc, "stage", None),
        "error": type(exc).__name__,
        "message": str(exc),
        "records": getattr(exc, "records", []),
    }
    path = out / "error_report.json"
    write_json(path, rep)
    return path
