import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pssf.errors import DataError, DegenerateRoiError, ShapeError
from pssf.radiomics.extract import (
    FAMILY_ORDER,
    ExtractConfig,
    FeatureMatrix,
    feature_columns,
    image_features,
    prune_correlated,
    read_matrix,
    write_matrix,
)
from pssf.radiomics.firstorder import FIRST_ORDER_NAMES, first_order
from pssf.radiomics.preprocess import discretize, preprocess_array
from pssf.radiomics.roi import GROUND_TRUTH_FALLBACK, TEMPLATE_MATCH, RoiBox, locate_roi
from pssf.radiomics.shape import SHAPE_NAMES, ShapeUnavailable, shape_features, shape_from_mask
from pssf.radiomics.texture import FAMILIES


# ------------------------------------------------------------ preprocessing


def test_constant_roi_is_degenerate():
    with pytest.raises(DegenerateRoiError):
        preprocess_array(np.full((8, 8), 7.0))


def test_three_sigma_values_map_to_end_bins():
    z = np.array([-3.0, 3.0, -3.0, 3.0])
    assert discretize(z, 32).tolist() == [1, 32, 1, 32]
    # values exactly mean +/- 3 sd after z-scoring: a 1:1 two-point set has sd = half range
    roi = preprocess_array(np.array([[-1.0, 1.0], [1.0, -1.0]]) * 3 + 10, 16)
    assert sorted(set(roi.levels.ravel().tolist())) == [6, 11]


def test_discretize_edges_and_clamp():
    assert discretize(np.array([-10.0, 10.0, 0.0]), 6).tolist() == [1, 6, 4]


@given(
    arrays(np.float64, (6, 6), elements=st.floats(0, 1000, allow_nan=False)),
    st.floats(0.01, 100.0),
    st.floats(-1e4, 1e4),
)
def test_affine_invariance_of_levels_and_features(raw, a, b):
    if raw.std() < 1e-3:
        return
    r1 = preprocess_array(raw, 8)
    r2 = preprocess_array(a * raw + b, 8)
    assert np.array_equal(r1.levels, r2.levels)
    for fn in FAMILIES.values():
        f1, f2 = fn(r1.levels, 8), fn(r2.levels, 8)
        assert f1 == f2
    fo1 = first_order(r1.levels, r1.z, 8)
    fo2 = first_order(r2.levels, r2.z, 8)
    for k in FIRST_ORDER_NAMES:
        assert fo1[k] == pytest.approx(fo2[k], abs=1e-7)


# ------------------------------------------------------------ first order


def test_first_order_hand_fixture():
    # values 1..16; levels four blocks of four
    x = np.arange(1, 17, dtype=float).reshape(4, 4)
    lv = np.repeat([1, 2, 3, 4], 4).reshape(4, 4)
    f = first_order(lv, x, 4)
    want = {
        "mean": 8.5,
        "variance": 255 / 12,  # (n^2 - 1) / 12
        "skewness": 0.0,
        "kurtosis": -6 * 257 / (5 * 255),  # discrete uniform excess kurtosis
        "minimum": 1.0,
        "maximum": 16.0,
        "median": 8.5,
        "p10": 2.5,  # linear interpolation at position 1.5
        "p90": 14.5,
        "iqr": 12.25 - 4.75,
        "range": 15.0,
        "mad": 4.0,  # 2 * (0.5 + 1.5 + ... + 7.5) / 16
        "rms": np.sqrt(1496 / 16),
        "energy": 1496.0,
        "entropy": 2.0,
        "uniformity": 0.25,
    }
    assert set(f) == set(want)
    for k, v in want.items():
        assert f[k] == pytest.approx(v, abs=1e-9), k


def test_first_order_on_zscored_roi(rng):
    roi = preprocess_array(rng.normal(100, 7, size=(20, 20)), 32)
    f = first_order(roi.levels, roi.z, 32)
    assert f["mean"] == pytest.approx(0.0, abs=1e-9)
    assert f["variance"] == pytest.approx(1.0, abs=1e-9)


def test_two_equal_levels_entropy():
    lv = np.array([[1, 2], [2, 1]])
    f = first_order(lv, np.array([0.0, 1.0, 1.0, 0.0]), 2)
    assert f["entropy"] == pytest.approx(1.0)
    assert f["uniformity"] == pytest.approx(0.5)


# ------------------------------------------------------------ ROI


def test_exact_template_copy_scores_one(rng):
    img = rng.normal(0, 1, size=(120, 120))
    tpl = img[50:66, 70:86].copy()
    box = locate_roi(img, tpl, 32, search_fraction=0.5)
    assert box.method == TEMPLATE_MATCH
    assert box.localization_score == pytest.approx(1.0, abs=1e-6)
    assert box.center_px == (70 + 8, 50 + 8)


def test_noise_image_falls_back(rng):
    img = rng.normal(0, 1, size=(128, 128))
    tpl = np.outer(np.hanning(32), np.hanning(32))
    box = locate_roi(img, tpl, 32, fallback_center=(40.2, 90.7))
    assert box.localization_score < 0.3
    assert box.method == GROUND_TRUTH_FALLBACK
    assert box.center_px == (40, 91)


def test_template_larger_than_image():
    with pytest.raises(ShapeError):
        locate_roi(np.zeros((10, 10)), np.zeros((12, 12)), 4)


def test_box_is_snapped_inside():
    box = locate_roi(np.zeros((64, 64)) + np.arange(64), np.ones((8, 8)), 32, fallback_center=(0, 0))
    x0, y0, x1, y1 = box.bounds
    assert x0 >= 0 and y0 >= 0 and x1 <= 64 and y1 <= 64 and x1 - x0 == 32


# ------------------------------------------------------------ shape


def disk(size, r):
    yy, xx = np.mgrid[:size, :size]
    c = (size - 1) / 2
    return (xx - c) ** 2 + (yy - c) ** 2 <= r * r


def test_disk_shape_descriptors():
    size, r = 128, 30
    img = np.where(disk(size, r), 2000.0, 40000.0)
    f = shape_features(img, 1.0)
    assert set(f) == set(SHAPE_NAMES)
    assert f["area_fraction"] == pytest.approx(np.pi * r * r / size**2, rel=0.02)
    assert 0.95 <= f["circularity"] <= 1.0


def test_full_bone_gap_is_zero():
    assert shape_from_mask(np.ones((30, 30), bool), 0.5)["gap_mm"] == 0.0


def test_gap_of_two_slabs():
    m = np.zeros((60, 60), bool)
    m[:20] = True
    m[27:] = True
    assert shape_from_mask(m, 0.5)["gap_mm"] == pytest.approx(7 * 0.5)


def test_flat_roi_shape_unavailable():
    with pytest.raises(ShapeUnavailable):
        shape_features(np.full((32, 32), 100.0), 1.0)


# ------------------------------------------------------------ pruning


def test_prune_duplicate_keeps_earlier(rng):
    X = rng.normal(size=(50, 3))
    X = np.column_stack([X, X[:, 1]])
    kept, dropped = prune_correlated(X, ["a", "b", "c", "d"])
    assert kept == ["a", "b", "c"]
    assert dropped[0][0] == "d" and "with b" in dropped[0][1]


def test_prune_negation_dropped(rng):
    x = rng.normal(size=40)
    kept, dropped = prune_correlated(np.column_stack([x, -x]), ["a", "b"])
    assert kept == ["a"] and [d[0] for d in dropped] == ["b"]


def test_prune_orthogonal_all_kept(rng):
    X = rng.normal(size=(400, 6))
    rho = np.corrcoef(X.T)
    assert np.abs(rho[np.triu_indices(6, 1)]).max() < 0.2
    kept, dropped = prune_correlated(X, list("abcdef"))
    assert kept == list("abcdef") and dropped == []


def test_prune_constant_reason(rng):
    X = np.column_stack([rng.normal(size=10), np.full(10, 3.0)])
    assert prune_correlated(X, ["a", "b"])[1] == [("b", "constant")]


def test_prune_needs_two_rows():
    with pytest.raises(DataError):
        prune_correlated(np.ones((1, 2)), ["a", "b"])


# ------------------------------------------------------------ matrix


def test_feature_columns_order_and_families():
    cols = feature_columns()
    fams = [f for _, f in cols]
    assert [f for i, f in enumerate(fams) if i == 0 or fams[i - 1] != f] == list(FAMILY_ORDER)
    assert len({c for c, _ in cols}) == len(cols)


def test_matrix_csv_round_trip_is_exact(tmp_path, rng):
    cols = ["a_x", "b_y"]
    fm = FeatureMatrix([("K1", "reference", 0), ("K2", "low_dose", 1)], cols, {"a_x": "a", "b_y": "b"},
                       rng.normal(size=(2, 2)))
    write_matrix(tmp_path / "m.csv", fm, {"n_bins": 32})
    back = read_matrix(tmp_path / "m.csv")
    assert back.keys == fm.keys and back.columns == cols and back.families == fm.families
    assert np.array_equal(back.values, fm.values)
    assert (tmp_path / "m.csv").read_text().splitlines()[0].startswith("knee_id,protocol,repeat,")


def test_image_features_on_rendered_knee():
    from pssf.phantom import KneeMorphology
    from pssf.physics import load_physics
    from pssf.projector import make_protocols, simulate

    m = KneeMorphology(0, 5.0, 5.0, 0, 0.0)
    proto = make_protocols("desk")[0]
    img = simulate(m, proto, load_physics(), seed=1)
    cfg = ExtractConfig()
    feats, box = image_features(img.pixels, cfg, cfg.template(), img.joint_center_px, "right")
    assert box.method == TEMPLATE_MATCH
    assert np.hypot(box.center_px[0] - img.joint_center_px[0], box.center_px[1] - img.joint_center_px[1]) <= 4
    assert set(feats) == {c for c, _ in feature_columns()}
    assert all(np.isfinite(v) for v in feats.values())
    assert isinstance(box, RoiBox)
