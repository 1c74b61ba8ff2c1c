"""Virtual population: subjects, knees, grade quotas and per-protocol image records."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import PSSFError, SpecError
from .io import read_json, read_jsonl, sha256_file, write_json, write_jsonl, write_png16, write_u16_raw
from .phantom import DEFAULT_ANATOMY, Anatomy, KneeMorphology, build_phantom, sample_morphology
from .physics import Physics
from .projector import AcquisitionProtocol, make_protocols, simulate
from .seeding import stable_hash, substream

log = logging.getLogger(__name__)


@dataclass
class CohortSpec:
    n_subjects: int = 180
    n_knees: int = 260
    grade_fractions: tuple = (0.5, 0.3, 0.2)
    protocols: list = field(default_factory=make_protocols)
    master_seed: int = 0

    def validate(self) -> "CohortSpec":
        if self.n_subjects < 1 or not self.n_subjects <= self.n_knees <= 2 * self.n_subjects:
            raise SpecError("need n_subjects <= n_knees <= 2 * n_subjects")
        f = np.asarray(self.grade_fractions, dtype=float)
        if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
            raise SpecError("grade_fractions must be three non-negative numbers summing to 1")
        names = [p.name for p in self.protocols]
        if len(set(names)) != len(names):
            raise SpecError("protocol names must be unique")
        return self

    def echo(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_knees": self.n_knees,
            "grade_fractions": list(self.grade_fractions),
            "protocols": [p.name for p in self.protocols],
            "master_seed": self.master_seed,
        }


@dataclass
class ManifestRecord:
    subject_id: str
    knee_id: str
    side: str
    kl_grade: int
    morphology: KneeMorphology
    protocol_name: str
    image_path: str
    image_seed: int
    repeat_index: int = 0
    protocol_overrides: dict = field(default_factory=dict)
    checksum: Optional[str] = None
    joint_center_px: Optional[list] = None

    @property
    def key(self) -> tuple:
        return (self.knee_id, self.protocol_name, self.repeat_index)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["morphology"] = self.morphology.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        d = dict(d)
        d["morphology"] = KneeMorphology.from_dict(d["morphology"])
        return cls(**d)


@dataclass
class CohortManifest:
    records: list
    master_seed: int
    spec: dict
    protocols: dict  # name -> AcquisitionProtocol

    def protocol_for(self, rec: ManifestRecord) -> AcquisitionProtocol:
        proto = self.protocols[rec.protocol_name]
        return replace(proto, **rec.protocol_overrides) if rec.protocol_overrides else proto

    def knees(self) -> dict:
        """knee_id -> (subject_id, side, kl_grade, morphology)."""
        out = {}
        for r in self.records:
            out.setdefault(r.knee_id, (r.subject_id, r.side, r.kl_grade, r.morphology))
        return out

    def save(self, path) -> None:
        path = Path(path)
        write_jsonl(path, [r.to_dict() for r in self.records])
        write_json(
            path.with_suffix(".meta.json"),
            {
                "master_seed": self.master_seed,
                "spec": self.spec,
                "protocols": {k: v.to_dict() for k, v in self.protocols.items()},
                "tool_version": __version__,
            },
        )

    @classmethod
    def load(cls, path) -> "CohortManifest":
        path = Path(path)
        meta = read_json(path.with_suffix(".meta.json"))
        records = [ManifestRecord.from_dict(d) for d in read_jsonl(path)]
        protocols = {k: AcquisitionProtocol(**v) for k, v in meta["protocols"].items()}
        return cls(records, meta["master_seed"], meta["spec"], protocols)


def largest_remainder(fractions, total: int) -> list:
    raw = np.asarray(fractions, dtype=float) * total
    counts = np.floor(raw + 1e-9).astype(int)
    short = total - counts.sum()
    if short < 0 or short > len(counts):
        raise SpecError("quota rounding is infeasible")
    order = sorted(range(len(counts)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


def image_seed(master_seed: int, knee_id: str, protocol_name: str, repeat_index: int = 0) -> int:
    if repeat_index == 0:
        return stable_hash(int(master_seed), knee_id, protocol_name)
    return stable_hash(int(master_seed), knee_id, protocol_name, "repeat", int(repeat_index))


def generate_cohort(spec: CohortSpec) -> CohortManifest:
    """Deterministic population from ``spec.master_seed``.

    Grades are an exact quota (a seeded permutation of a fixed multiset), and
    every knee gets one record per protocol.
    """
    spec.validate()
    seed = int(spec.master_seed)
    rng = substream(seed, "cohort")
    n_bilateral = spec.n_knees - spec.n_subjects
    bilateral = set(rng.permutation(spec.n_subjects)[:n_bilateral].tolist())

    knees = []  # (subject, side)
    width = max(3, len(str(spec.n_subjects)))
    for i in range(spec.n_subjects):
        sid = f"S{i + 1:0{width}d}"
        if i in bilateral:
            knees += [(sid, "left"), (sid, "right")]
        else:
            knees.append((sid, ("left", "right")[int(rng.integers(0, 2))]))

    quotas = largest_remainder(spec.grade_fractions, spec.n_knees)
    grades = np.repeat(np.arange(3), quotas)[rng.permutation(spec.n_knees)]

    records = []
    for (sid, side), grade in zip(knees, grades.tolist()):
        knee_id = f"{sid}_{side}"
        morph = sample_morphology(grade, substream(seed, "morphology", knee_id), side=side)
        for proto in spec.protocols:
            records.append(
                ManifestRecord(
                    subject_id=sid,
                    knee_id=knee_id,
                    side=side,
                    kl_grade=grade,
                    morphology=morph,
                    protocol_name=proto.name,
                    image_path=f"images/{sid}_{side}_{proto.name}.png",
                    image_seed=image_seed(seed, knee_id, proto.name),
                )
            )
    return CohortManifest(records, seed, spec.echo(), {p.name: p for p in spec.protocols})


def _needs_render(rec: ManifestRecord, out_dir: Path) -> bool:
    path = out_dir / rec.image_path
    if rec.checksum is None or not path.exists():
        return True
    return sha256_file(path) != rec.checksum


def _render_group(job):
    """Render every record of one knee; phantoms are shared per detector grid."""
    records, protocols, physics, anatomy, out_dir, write_raw = job
    phantoms = {}
    results = []
    for rec, proto in zip(records, protocols):
        try:
            grid = (proto.pixel_mm, proto.fov_px)
            if grid not in phantoms:
                phantoms[grid] = build_phantom(rec.morphology, proto.pixel_mm, proto.fov_px, proto.fov_px, anatomy)
            img = simulate(rec.morphology, proto, physics, rec.image_seed, rec.knee_id, phantoms[grid], anatomy)
            path = out_dir / rec.image_path
            write_png16(
                path,
                img.pixels,
                {
                    "pssf.knee_id": rec.knee_id,
                    "pssf.protocol": rec.protocol_name,
                    "pssf.repeat_index": rec.repeat_index,
                    "pssf.seed": rec.image_seed,
                    "pssf.stage": "simulate",
                    "pssf.tool_version": __version__,
                },
            )
            if write_raw:
                write_u16_raw(path.with_suffix(".u16"), img.pixels)
            results.append((rec.key, sha256_file(path), list(img.joint_center_px), None))
        except (PSSFError, OSError, ValueError) as exc:
            results.append((rec.key, None, None, f"{type(exc).__name__}: {exc}"))
    return results


@dataclass
class RenderSummary:
    rendered: list
    skipped: list
    failures: list  # (record key, message)


def render_cohort(
    manifest: CohortManifest,
    physics: Physics,
    out_dir,
    jobs: int = 1,
    anatomy: Anatomy = DEFAULT_ANATOMY,
    manifest_name: Optional[str] = "manifest.jsonl",
    write_raw: bool = False,
) -> RenderSummary:
    """Render missing or stale images, then rewrite the manifest with checksums.

    Records whose file exists with the recorded checksum are skipped.  Failures
    are collected per record; the batch continues.
    """
    out_dir = Path(out_dir)
    groups = {}
    skipped = []
    for rec in manifest.records:
        if _needs_render(rec, out_dir):
            groups.setdefault(rec.knee_id, []).append(rec)
        else:
            skipped.append(rec.key)
    jobs_list = [
        (recs, [manifest.protocol_for(r) for r in recs], physics, anatomy, out_dir, write_raw)
        for recs in groups.values()
    ]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for group in pool.map(_render_group, jobs_list, chunksize=4) for r in group]
    else:
        results = [r for job in jobs_list for r in _render_group(job)]

    by_key = {r.key: r for r in manifest.records}
    rendered, failures = [], []
    for key, checksum, jc, err in results:
        rec = by_key[key]
        if err is None:
            rec.checksum = checksum
            rec.joint_center_px = jc
            rendered.append(key)
        else:
            rec.checksum = None
            failures.append((key, err))
            log.error("render failed for %s: %s", key, err)
    if manifest_name:
        manifest.save(out_dir / manifest_name)
    return RenderSummary(rendered, skipped, failures)
