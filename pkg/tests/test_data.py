import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import write_uji_csv
from hstloc.data import (
    NOT_DETECTED, ScalerParams, SitePlan, SyntheticConfig, encode_building_floor, fit_scaler,
    generate_synthetic, knn_oracle, load_cache, load_ujiindoorloc_csv, not_detected_fraction, path_loss,
    records_digest, records_to_dataset, save_cache, scale_coords, scale_rssi, split_indices, split_train_val,
    unscale_coords, FingerprintRecord, Dataset, infer_site_plan, UJI_SITE,
)
from hstloc.errors import DataError

SCALER = ScalerParams((0.0, 0.0), (10.0, 20.0))


# -- loader ---------------------------------------------------------------------------

def test_load_fixture(tmp_path):
    path = tmp_path / "train.csv"
    rows = write_uji_csv(path, n=30)
    recs = load_ujiindoorloc_csv(path, "train")
    assert len(recs) == 30
    assert recs[4].building_id == rows[4][523] and recs[4].floor_id == rows[4][522]
    assert recs[0].rssi.shape == (520,)
    assert recs[0].longitude == pytest.approx(float(rows[0][520]))
    assert recs[0].timestamp == rows[0][528]


def test_count_mismatch_only_warns(tmp_path, caplog):
    path = tmp_path / "train.csv"
    write_uji_csv(path, n=5)
    with caplog.at_level("WARNING"):
        assert len(load_ujiindoorloc_csv(path, "train")) == 5
    assert "19937" in caplog.text


def test_out_of_range_rssi_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    rows = write_uji_csv(path, n=3)
    rows[1][7] = -200
    write_uji_csv(path, rows=rows)
    with pytest.raises(DataError, match=r"bad.csv:3: WAP008=-200"):
        load_ujiindoorloc_csv(path)


def test_column_count_mismatch(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("WAP001,WAP002\n1,2\n")
    with pytest.raises(DataError, match="529 columns"):
        load_ujiindoorloc_csv(path)


def test_unparseable_row(tmp_path):
    path = tmp_path / "x.csv"
    rows = write_uji_csv(path, n=2)
    rows[0][10] = "abc"
    write_uji_csv(path, rows=rows)
    with pytest.raises(DataError, match=r"x.csv:2"):
        load_ujiindoorloc_csv(path)


def test_not_detected_marker_matches_sparsity(tmp_path):
    # the fixture draws 97% absent readings, as in the real files
    path = tmp_path / "train.csv"
    write_uji_csv(path, n=50)
    recs = load_ujiindoorloc_csv(path)
    assert abs(not_detected_fraction(recs) - 0.97) < 0.01


def test_loader_digest_stable(tmp_path):
    path = tmp_path / "train.csv"
    write_uji_csv(path, n=10)
    assert records_digest(load_ujiindoorloc_csv(path)) == records_digest(load_ujiindoorloc_csv(path))


def test_infer_site_plan(tmp_path):
    path = tmp_path / "train.csv"
    write_uji_csv(path, n=60)
    assert infer_site_plan(load_ujiindoorloc_csv(path)) == UJI_SITE


# -- scaling --------------------------------------------------------------------------

def test_scale_rssi_endpoints():
    assert scale_rssi(-110, SCALER) == 0.0
    assert scale_rssi(0, SCALER) == 1.0
    assert scale_rssi(-55, SCALER) == 0.5
    assert scale_rssi(NOT_DETECTED, SCALER) == 0.0


def test_scale_rssi_clamps():
    assert scale_rssi(-130, SCALER) == 0.0


def test_coordinate_scaling():
    pts = np.array([[1.0, 5.0], [7.0, 2.0], [3.0, 9.0]])
    sc = fit_scaler(pts)
    s = scale_coords(pts, sc)
    np.testing.assert_array_equal(s.min(axis=0), [0, 0])
    np.testing.assert_array_equal(s.max(axis=0), [1, 1])
    outside = np.array([[-5.0, 20.0]])
    s_out = scale_coords(outside, sc)
    assert s_out[0, 0] < 0 and s_out[0, 1] > 1
    np.testing.assert_allclose(unscale_coords(s_out, sc), outside, atol=1e-9)


def test_scaler_round_trip_bulk():
    rng = np.random.default_rng(0)
    sc = ScalerParams((-7691.3, 4864745.7), (-7300.8, 4865017.4))
    v = rng.uniform([-8000, 4864000], [-7000, 4866000], size=(10_000, 2))
    assert np.max(np.abs(unscale_coords(scale_coords(v, sc), sc) - v)) < 1e-9


def test_degenerate_coordinate_range():
    with pytest.raises(DataError):
        fit_scaler([[1.0, 2.0], [1.0, 3.0]])


# -- encoding -------------------------------------------------------------------------

def _rec(b, f):
    return FingerprintRecord(np.full(4, NOT_DETECTED), b, f, 0.0, 0.0)


def test_encode_building_floor():
    plan = SitePlan((4, 4, 5), 520)
    np.testing.assert_array_equal(encode_building_floor(_rec(1, 3), plan), [0, 1, 0, 0, 0, 0, 1, 0])
    np.testing.assert_array_equal(encode_building_floor(_rec(0, 0), plan), [1, 0, 0, 1, 0, 0, 0, 0])
    with pytest.raises(DataError):
        encode_building_floor(_rec(0, 5), plan)


def test_site_plan_max_floors():
    assert SitePlan((4, 4, 5), 520).n_floors == 5
    with pytest.raises(DataError):
        SitePlan((0, 3), 10)


# -- splitting ------------------------------------------------------------------------

def test_split_uji_scale_counts():
    rng = np.random.default_rng(1)
    strata = rng.choice(13, size=19937, p=np.full(13, 1 / 13))
    tr, va = split_indices(strata, 0.1, seed=0)
    assert 1930 <= len(va) <= 2060
    assert len(tr) + len(va) == 19937
    assert not set(tr) & set(va)


def _toy_dataset(n=60, seed=0):
    rng = np.random.default_rng(seed)
    site = SitePlan((2, 3), 5)
    b = rng.integers(0, 2, n)
    f = rng.integers(0, 2, n) + b
    xy = rng.uniform(0, 10, size=(n, 2))
    return Dataset(rng.random((n, 5)).astype(np.float32), b, f, xy, site, fit_scaler(xy))


def test_split_deterministic_disjoint_exhaustive():
    ds = _toy_dataset()
    a_tr, a_va = split_indices(ds.strata, 0.2, 5)
    b_tr, b_va = split_indices(ds.strata, 0.2, 5)
    np.testing.assert_array_equal(a_va, b_va)
    assert sorted([*a_tr, *a_va]) == list(range(len(ds)))
    tr, va = split_train_val(ds, 0.2, 5)
    assert len(tr) + len(va) == len(ds)


def test_split_is_stratified():
    strata = np.repeat([0, 1, 2], [100, 50, 30])
    _, va = split_indices(strata, 0.1, 0)
    assert np.bincount(strata[va]).tolist() == [10, 5, 3]


def test_split_small_stratum_degrades():
    strata = np.array([0] * 20 + [1])
    with pytest.warns(UserWarning, match="unstratified"):
        tr, va = split_indices(strata, 0.1, 0)
    assert len(va) == 2


def test_split_fraction_bounds():
    with pytest.raises(ValueError):
        split_indices(np.zeros(4), 1.0, 0)


# -- synthetic ------------------------------------------------------------------------

def test_path_loss_reference_distance():
    cfg = SyntheticConfig(noise_sigma=0.0)
    assert path_loss(1.0, cfg) == cfg.ref_power


def test_path_loss_doubling():
    cfg = SyntheticConfig(path_loss_exponent=2.0, noise_sigma=0.0)
    assert path_loss(5.0, cfg) - path_loss(10.0, cfg) == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert 20 * math.log10(2) == pytest.approx(6.02, abs=5e-3)


@given(st.floats(1.0, 500.0), st.floats(1e-3, 100.0))
def test_path_loss_strictly_decreasing(d, delta):
    cfg = SyntheticConfig(noise_sigma=0.0)
    assert path_loss(d + delta, cfg) < path_loss(d, cfg)


def test_synthetic_shapes_and_determinism():
    cfg = SyntheticConfig(site=SitePlan((3, 3), 50), train_records=120, test_records=30)
    tr, te, site = generate_synthetic(cfg, 3)
    assert len(tr) == 120 and len(te) == 30 and tr.features.shape == (120, 50)
    tr2, te2, _ = generate_synthetic(cfg, 3)
    assert tr.digest() == tr2.digest() and te.digest() == te2.digest()
    assert tr.digest() != generate_synthetic(cfg, 4)[0].digest()
    onehot = tr.bf_onehot
    assert (onehot[:, :2].sum(axis=1) == 1).all() and (onehot[:, 2:].sum(axis=1) == 1).all()
    assert tr.features.min() >= 0 and tr.features.max() <= 1


def test_synthetic_threshold_above_reference_power():
    cfg = SyntheticConfig(threshold=-20.0, ref_power=-40.0, train_records=10, test_records=5)
    with pytest.warns(UserWarning, match="not-detected"):
        tr, te, _ = generate_synthetic(cfg, 0)
    assert not tr.features.any() and not te.features.any()


def test_synthetic_rejects_threshold_below_floor():
    with pytest.raises(DataError):
        SyntheticConfig(threshold=-120.0)


# -- kNN oracle -----------------------------------------------------------------------

def test_knn_exact_match():
    ds = _toy_dataset()
    b, f, xy = knn_oracle(ds, ds.features[7:8], k=1)
    assert (b[0], f[0]) == (ds.building[7], ds.floor[7])
    np.testing.assert_array_equal(xy[0], ds.coords[7])


def test_knn_all_neighbours_centroid():
    ds = _toy_dataset()
    _, _, xy = knn_oracle(ds, ds.features[:3], k=len(ds))
    np.testing.assert_allclose(xy, np.tile(ds.coords.mean(axis=0), (3, 1)))


def test_knn_tie_goes_to_smallest_id():
    site = SitePlan((1, 1), 1)
    ds = Dataset(np.array([[0.1], [0.3]], dtype=np.float32), np.array([1, 0]), np.array([0, 0]),
                 np.array([[0.0, 0.0], [2.0, 2.0]]), site, SCALER)
    b, _, _ = knn_oracle(ds, np.array([[0.2]]), k=2)
    assert b[0] == 0


def test_knn_noise_free_floor_perfect():
    cfg = SyntheticConfig(noise_sigma=0.0, train_records=1200, test_records=120)
    tr, te, _ = generate_synthetic(cfg, 0)
    _, f, _ = knn_oracle(tr, te.features, k=3)
    assert np.mean(f == te.floor) == 1.0


# -- cache ----------------------------------------------------------------------------

def test_cache_round_trip(tmp_path):
    cfg = SyntheticConfig(train_records=40, test_records=10)
    tr, te, _ = generate_synthetic(cfg, 0)
    save_cache(tmp_path / "c", {"train": tr, "test": te})
    loaded = load_cache(tmp_path / "c")
    assert loaded["train"].digest() == tr.digest()
    assert loaded["test"].scaler == tr.scaler and loaded["test"].site == tr.site
    first = (tmp_path / "c" / "manifest.json").read_bytes()
    save_cache(tmp_path / "c", {"train": tr, "test": te})
    assert (tmp_path / "c" / "manifest.json").read_bytes() == first


def test_cache_detects_corruption(tmp_path):
    tr, te, _ = generate_synthetic(SyntheticConfig(train_records=20, test_records=5), 0)
    save_cache(tmp_path, {"train": tr, "test": te})
    f = tmp_path / "train.coords.npy"
    raw = bytearray(f.read_bytes())
    raw[-1] ^= 1
    f.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="checksum"):
        load_cache(tmp_path)
