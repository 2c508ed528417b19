import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hstloc.errors import ConfigError, HstError
from hstloc.evaluation import (
    ErrorModelConfig, EvalReport, compare_reports, evaluate, format_table, positioning_error, positioning_errors,
)

coord = st.floats(-500, 500, allow_nan=False)
label = st.integers(0, 4)


def test_pythagoras():
    assert positioning_error((0, 1, (3.0, 4.0)), (0, 1, (0.0, 0.0))) == 5.0


def test_exact():
    assert positioning_error((2, 3, (10.5, -7.0)), (2, 3, (10.5, -7.0))) == 0.0


def test_floor_penalty():
    assert positioning_error((1, 0, (5.0, 5.0)), (1, 2, (5.0, 5.0))) == 8.0


def test_building_penalty_single_record():
    r = evaluate(([1], [2], [[3.0, 3.0]]), ([0], [2], [[3.0, 3.0]]))
    assert r.mean == r.min == r.median == r.max == 50.0
    assert r.std == 0.0 and r.building_hit == 0.0 and r.floor_hit == 1.0


def test_euclidean3d_variant():
    cfg = ErrorModelConfig(kind="euclidean3d", floor_height=4.0)
    assert positioning_error((0, 1, (3.0, 0.0)), (0, 0, (0.0, 0.0)), cfg) == 5.0


def test_config_validation():
    with pytest.raises(ConfigError):
        ErrorModelConfig(building_penalty=-1)
    with pytest.raises(ConfigError):
        ErrorModelConfig(kind="manhattan")


def test_all_exact():
    xy = np.random.default_rng(0).random((7, 2)) * 100
    b, f = np.arange(7) % 3, np.arange(7) % 5
    r = evaluate((b, f, xy), (b, f, xy))
    assert (r.building_hit, r.floor_hit) == (1.0, 1.0)
    assert r.mean == r.std == r.min == r.median == r.max == 0.0


def test_lower_median():
    xy = np.zeros((4, 2))
    shifted = np.array([[1.0, 0], [2.0, 0], [3.0, 0], [4.0, 0]])
    z = np.zeros(4, int)
    r = evaluate((z, z, shifted), (z, z, xy))
    assert r.median == 2.0
    assert r.std == pytest.approx(math.sqrt(1.25))


def test_length_mismatch_and_empty():
    with pytest.raises(HstError):
        evaluate(([0, 0], [0, 0], np.zeros((2, 2))), ([0], [0], np.zeros((1, 2))))
    with pytest.raises(HstError):
        evaluate(([], [], np.zeros((0, 2))), ([], [], np.zeros((0, 2))))


@given(coord, coord, coord, coord, label, label, label, label, coord, coord)
def test_sign_flip_and_translation(x1, y1, x2, y2, b1, f1, b2, f2, dx, dy):
    cfg = ErrorModelConfig()
    e = positioning_error((b1, f1, (x1, y1)), (b2, f2, (x2, y2)), cfg)
    flipped = positioning_error((b1, f1, (-x1, -y1)), (b2, f2, (-x2, -y2)), cfg)
    moved = positioning_error((b1, f1, (x1 + dx, y1 + dy)), (b2, f2, (x2 + dx, y2 + dy)), cfg)
    assert flipped == pytest.approx(e, abs=1e-9)
    assert moved == pytest.approx(e, rel=1e-9, abs=1e-6)


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.integers(0, 4), st.integers(0, 4))
def test_monotone_in_distance_and_floor(d1, d2, k1, k2):
    for kind in ("penalty", "euclidean3d"):
        cfg = ErrorModelConfig(kind=kind)
        lo, hi = sorted((d1, d2))
        assert positioning_error((0, 0, (lo, 0)), (0, 0, (0, 0)), cfg) <= positioning_error((0, 0, (hi, 0)), (0, 0, (0, 0)), cfg)
        a, b = sorted((k1, k2))
        assert positioning_error((0, a, (1, 1)), (0, 0, (0, 0)), cfg) <= positioning_error((0, b, (1, 1)), (0, 0, (0, 0)), cfg)


def _random_set(rng, n):
    b = rng.integers(0, 3, n)
    f = rng.integers(0, 5, n)
    xy = rng.normal(0, 50, (n, 2))
    flip = rng.random(n) < 0.2
    return (np.where(flip, (b + 1) % 3, b), np.where(rng.random(n) < 0.1, (f + 1) % 5, f),
            xy + rng.normal(0, 5, (n, 2))), (b, f, xy)


@settings(max_examples=40)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31))
def test_concatenation_average_is_weighted(n1, n2, seed):
    rng = np.random.default_rng(seed)
    (p1, t1), (p2, t2) = _random_set(rng, n1), _random_set(rng, n2)
    joined = evaluate(*[tuple(np.concatenate([u, v]) for u, v in zip(a, b)) for a, b in ((p1, p2), (t1, t2))])
    r1, r2 = evaluate(p1, t1), evaluate(p2, t2)
    assert joined.mean == pytest.approx((n1 * r1.mean + n2 * r2.mean) / (n1 + n2), rel=1e-12)


@settings(max_examples=40)
@given(st.integers(1, 50), st.integers(0, 2**31))
def test_report_invariants(n, seed):
    r = evaluate(*_random_set(np.random.default_rng(seed), n))
    assert 0 <= r.building_hit <= 1 and 0 <= r.floor_hit <= 1
    assert r.min <= r.median <= r.max and r.std >= 0
    assert r.count == n


def _report(mean, model="", dataset="d"):
    return EvalReport(1.0, 0.9334, mean, 7.55, 0.18, 5.94, 79.32, 1111, model, dataset)


def test_compare_identical():
    a = _report(8.19)
    cmp = compare_reports(a, a)
    assert all(v == 0 for v in cmp["delta"].values())


def test_compare_reference_vs_proposed():
    cmp = compare_reports(_report(8.45, "reference"), _report(8.19, "proposed"))
    assert cmp["delta"]["mean"] == pytest.approx(-0.26, abs=1e-9)
    assert cmp["b_better"]["mean"]


def test_compare_warnings_and_empty(caplog):
    with caplog.at_level(logging.WARNING):
        compare_reports(_report(1.0, dataset="x"), _report(1.0, dataset="y"))
    assert "different datasets" in caplog.text
    empty = _report(0.0)
    empty.count = 0
    with pytest.raises(HstError):
        compare_reports(empty, _report(1.0))


def test_format_table_and_round_trip():
    r = _report(8.19, "linked-dnn")
    table = format_table([r])
    assert "93.34%" in table and "8.19 m" in table and "79.32 m" in table
    assert EvalReport.from_dict(r.to_dict()) == r


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    pred, truth = _random_set(rng, 20)
    vec = positioning_errors(pred, truth)
    scalar = [positioning_error((pred[0][i], pred[1][i], pred[2][i]), (truth[0][i], truth[1][i], truth[2][i]))
              for i in range(20)]
    np.testing.assert_allclose(vec, scalar)
