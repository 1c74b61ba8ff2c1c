import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pssf.errors import GeometryOverflowError, InvalidGradeError
from pssf.phantom import GRADE_RANGES, SITES, KneeMorphology, build_phantom, sample_morphology


@pytest.mark.parametrize("grade", [0, 1, 2])
def test_samples_inside_closed_intervals(grade):
    rng = np.random.default_rng(grade)
    for _ in range(300):
        m = sample_morphology(grade, rng)
        for name, (lo, hi) in GRADE_RANGES[grade].items():
            assert lo <= getattr(m, name) <= hi
        assert len(m.osteophyte_sites) == m.osteophyte_count
        assert all(o.site in SITES and o.size_mm <= m.osteophyte_max_size_mm for o in m.osteophyte_sites)
        if m.osteophyte_count == 0:
            assert m.osteophyte_max_size_mm == 0.0


def test_table_ranges():
    assert GRADE_RANGES[0]["jsw_med_mm"] == (4.5, 5.5)
    assert GRADE_RANGES[2]["osteophyte_max_size_mm"] == (1.0, 3.0)
    assert GRADE_RANGES[2]["osteophyte_count"] == (1, 4)
    assert GRADE_RANGES[2]["varus_valgus_deg"] == (-5.0, 5.0)


def test_grade_zero_structural_zeroes():
    m = sample_morphology(0, np.random.default_rng(1))
    assert m.osteophyte_count == 0 and m.osteophyte_max_size_mm == 0 and m.sclerosis_factor == 1.0


def test_invalid_grade():
    with pytest.raises(InvalidGradeError):
        sample_morphology(3, np.random.default_rng(0))


@given(st.integers(0, 2), st.integers(0, 2**32 - 1))
def test_sampling_is_deterministic(grade, seed):
    a = sample_morphology(grade, np.random.default_rng(seed))
    b = sample_morphology(grade, np.random.default_rng(seed))
    assert a == b
    assert KneeMorphology.from_dict(a.to_dict()) == a


def test_grade_means_are_monotone():
    rng = np.random.default_rng(7)
    means = [np.mean([sample_morphology(g, rng).jsw_med_mm for _ in range(200)]) for g in range(3)]
    assert means[0] > means[1] > means[2]


def _gap_at(tmap, key):
    x, _ = tmap.contact_px[key]
    col = tmap.bone[:, int(round(x))] <= 0
    r = int(round(tmap.joint_center_px[1]))
    lo = hi = r
    while col[lo - 1]:
        lo -= 1
    while col[hi + 1]:
        hi += 1
    return hi - lo + 1


def test_medial_gap_pixels_full_resolution():
    m = KneeMorphology(0, 5.0, 5.0, 0, 0.0)
    t = build_phantom(m, 0.15, 2048, 2048)
    assert abs(_gap_at(t, "medial") - 5.0 / 0.15) <= 1


@pytest.mark.parametrize("side", ["right", "left"])
def test_gap_heights_match_jsw(side):
    m = KneeMorphology(1, 3.6, 4.8, 0, 0.0, side=side)
    t = build_phantom(m, 0.3, 800, 800).validate()
    assert abs(_gap_at(t, "medial") - 3.6 / 0.3) <= 1
    assert abs(_gap_at(t, "lateral") - 4.8 / 0.3) <= 1
    # canonical right knee: medial side at larger x
    mx, lx = t.contact_px["medial"][0], t.contact_px["lateral"][0]
    assert (mx > lx) == (side == "right")


def test_thickness_invariants():
    m = sample_morphology(2, np.random.default_rng(3))
    t = build_phantom(m, 0.6, 512, 512).validate()
    soft = t.thickness["soft_tissue"]
    inside = (soft + t.bone) > 0
    assert np.all(soft[~inside] == 0)
    assert inside[:, 256].all()  # limb column through the centre
    assert 0 <= t.joint_center_px[0] < 512 and 0 <= t.joint_center_px[1] < 512


def test_left_knee_mirrors_right():
    m = KneeMorphology(0, 5.0, 5.0, 0, 0.0)
    r = build_phantom(m, 0.6, 512, 512)
    lft = build_phantom(dataclasses.replace(m, side="left"), 0.6, 512, 512)
    assert np.array_equal(r.bone[:, ::-1], lft.bone)


def test_sclerosis_thickens_plate():
    m = KneeMorphology(1, 4.0, 4.5, 0, 0.0, sclerosis_factor=1.0)
    a = build_phantom(m, 0.3, 800, 800)
    b = build_phantom(dataclasses.replace(m, sclerosis_factor=1.3), 0.3, 800, 800)
    assert np.all(b.thickness["cortical_bone"] >= a.thickness["cortical_bone"] - 1e-9)
    assert b.thickness["cortical_bone"].sum() > a.thickness["cortical_bone"].sum()
    assert b.density.max() == pytest.approx(1.3) and a.density.max() == 1.0


def test_osteophytes_add_bone():
    base = KneeMorphology(2, 3.0, 4.0, 0, 0.0, sclerosis_factor=1.2)
    from pssf.phantom import Osteophyte

    bump = dataclasses.replace(base, osteophyte_count=1, osteophyte_max_size_mm=3.0,
                               osteophyte_sites=(Osteophyte("medial_femoral", 3.0),))
    a = build_phantom(base, 0.3, 800, 800)
    b = build_phantom(bump, 0.3, 800, 800)
    assert (b.bone > 0).sum() > (a.bone > 0).sum()


def test_rotation_preserves_bone_mass():
    m = KneeMorphology(2, 3.0, 4.0, 0, 0.0, sclerosis_factor=1.2)
    ref = build_phantom(m, 0.6, 512, 512).bone.sum()
    for ang in (-5.0, -2.5, 2.5, 5.0):
        tot = build_phantom(dataclasses.replace(m, varus_valgus_deg=ang), 0.6, 512, 512).bone.sum()
        assert abs(tot - ref) / ref < 0.01


def test_overflow():
    with pytest.raises(GeometryOverflowError):
        build_phantom(KneeMorphology(0, 5.0, 5.0, 0, 0.0), 0.6, 128, 128)


def test_phantom_deterministic():
    m = sample_morphology(2, np.random.default_rng(9))
    a = build_phantom(m, 0.6, 512, 512)
    b = build_phantom(m, 0.6, 512, 512)
    for k in a.thickness:
        assert np.array_equal(a.thickness[k], b.thickness[k])
