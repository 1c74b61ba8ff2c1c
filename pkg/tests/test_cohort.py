import re
from collections import Counter

import numpy as np
import pytest

from pssf.cohort import CohortManifest, CohortSpec, generate_cohort, largest_remainder, render_cohort
from pssf.errors import SpecError
from pssf.io import read_png16, sha256_file
from pssf.physics import load_physics
from pssf.projector import make_protocols

NAME = re.compile(r"^images/S\d{3}_(left|right)_(reference|low_dose|geometry_shift)\.png$")


@pytest.fixture(scope="module")
def default_manifest():
    return generate_cohort(CohortSpec())


def test_default_counts(default_manifest):
    m = default_manifest
    assert len(m.records) == 780
    knees = m.knees()
    assert len(knees) == 260
    assert len({v[0] for v in knees.values()}) == 180
    assert Counter(v[2] for v in knees.values()) == {0: 130, 1: 78, 2: 52}
    assert Counter(r.kl_grade for r in m.records) == {0: 390, 1: 234, 2: 156}


def test_bilateral_structure(default_manifest):
    per_subject = Counter(v[0] for v in default_manifest.knees().values())
    assert Counter(per_subject.values()) == {2: 80, 1: 100}
    for kid, (sid, side, _, morph) in default_manifest.knees().items():
        assert kid == f"{sid}_{side}" and morph.side == side


def test_protocol_completeness_and_shared_morphology(default_manifest):
    by_knee = {}
    for r in default_manifest.records:
        by_knee.setdefault(r.knee_id, []).append(r)
        assert NAME.match(r.image_path)
    for recs in by_knee.values():
        assert sorted(r.protocol_name for r in recs) == ["geometry_shift", "low_dose", "reference"]
        assert len({r.morphology for r in recs}) == 1
    assert len({r.image_seed for r in default_manifest.records}) == 780


def test_deterministic_manifest(tmp_path, default_manifest):
    default_manifest.save(tmp_path / "a.jsonl")
    generate_cohort(CohortSpec()).save(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = CohortManifest.load(tmp_path / "a.jsonl")
    assert [r.to_dict() for r in back.records] == [r.to_dict() for r in default_manifest.records]


def test_other_seed_differs(default_manifest):
    other = generate_cohort(CohortSpec(master_seed=1))
    assert [r.kl_grade for r in other.records] != [r.kl_grade for r in default_manifest.records]


def test_largest_remainder():
    assert largest_remainder((0.5, 0.3, 0.2), 260) == [130, 78, 52]
    assert sum(largest_remainder((1 / 3, 1 / 3, 1 / 3), 10)) == 10


@pytest.mark.parametrize("kw", [dict(n_subjects=10, n_knees=21), dict(n_subjects=10, n_knees=9),
                                dict(grade_fractions=(0.5, 0.5, 0.5))])
def test_infeasible_specs(kw):
    with pytest.raises(SpecError):
        generate_cohort(CohortSpec(**kw))


def test_duplicate_protocol_names():
    p = make_protocols()
    with pytest.raises(SpecError):
        CohortSpec(protocols=[p[0], p[0]]).validate()


def test_empty_protocol_list(tmp_path):
    m = generate_cohort(CohortSpec(n_subjects=4, n_knees=5, protocols=[]))
    s = render_cohort(m, load_physics(), tmp_path)
    assert m.records == [] and s.rendered == [] and s.failures == []
    assert CohortManifest.load(tmp_path / "manifest.jsonl").records == []


def test_render_is_idempotent(tmp_path):
    m = generate_cohort(CohortSpec(n_subjects=2, n_knees=3, master_seed=4))
    phys = load_physics()
    s1 = render_cohort(m, phys, tmp_path)
    assert len(s1.rendered) == 9 and not s1.failures
    for r in m.records:
        assert sha256_file(tmp_path / r.image_path) == r.checksum
        assert read_png16(tmp_path / r.image_path).dtype == np.uint16
    victim = m.records[4]
    (tmp_path / victim.image_path).unlink()
    m2 = CohortManifest.load(tmp_path / "manifest.jsonl")
    s2 = render_cohort(m2, phys, tmp_path)
    assert s2.rendered == [victim.key] and len(s2.skipped) == 8
    assert sha256_file(tmp_path / victim.image_path) == victim.checksum


def test_parallel_render_matches_serial(tmp_path):
    m = generate_cohort(CohortSpec(n_subjects=2, n_knees=3, master_seed=4))
    phys = load_physics()
    render_cohort(m, phys, tmp_path / "a", jobs=1)
    m2 = generate_cohort(CohortSpec(n_subjects=2, n_knees=3, master_seed=4))
    render_cohort(m2, phys, tmp_path / "b", jobs=2)
    assert [r.checksum for r in m.records] == [r.checksum for r in m2.records]
