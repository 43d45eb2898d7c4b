import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mnd import losses, metrics
from mnd.errors import ShapeError, UsageError
from mnd.losses import C1

from _support import tiny_classifier

unit = st.floats(0, 1, allow_nan=False)


def test_psnr_values():
    x = np.full((3, 8, 8), 0.5)
    assert metrics.psnr(x, x) == math.inf
    assert metrics.psnr(x + 1 / 255, x) == pytest.approx(48.13, abs=0.01)
    assert metrics.psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-9)


@given(hnp.arrays(np.float64, (3, 4, 4), elements=unit), hnp.arrays(np.float64, (3, 4, 4), elements=unit))
def test_psnr_symmetric(z, x):
    assert metrics.psnr(z, x) == metrics.psnr(x, z)


def test_psnr_decreases_with_mse():
    x = np.zeros((3, 4, 4))
    values = [metrics.psnr(x + d, x) for d in (0.01, 0.02, 0.05, 0.2)]
    assert values == sorted(values, reverse=True)


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ssim_eval_is_the_loss_implementation():
    rng = np.random.default_rng(0)
    for _ in range(100):
        z, x = rng.random((3, 6, 6)), rng.random((3, 6, 6))
        assert metrics.ssim_eval(z, x) == losses.ssim(z, x).item()
    x = rng.random((3, 6, 6))
    assert metrics.ssim_eval(x, x) == 1.0


def test_ssim_eval_of_constants():
    z, x = np.full((3, 4, 4), 0.2), np.full((3, 4, 4), 0.8)
    assert metrics.ssim_eval(z, x) == pytest.approx((2 * 0.16 + C1) / (0.04 + 0.64 + C1), rel=1e-12)


def test_diff_map_cases():
    x = np.random.default_rng(1).random((3, 5, 5))
    assert not metrics.abs_diff_map(x, x).any()
    z = x.copy()
    z[1, 2, 3] += 0.01
    m = metrics.abs_diff_map(z, x)
    assert m.dtype == np.uint8 and m[1, 2, 3] == 255 and m.sum() == 255


@settings(max_examples=30)
@given(hnp.arrays(np.float64, (3, 4, 4), elements=unit), hnp.arrays(np.float64, (3, 4, 4), elements=unit))
def test_diff_map_peak_is_255_when_anything_differs(z, x):
    m = metrics.abs_diff_map(z, x)
    for c in range(3):
        if np.any(z[c] != x[c]):
            assert m[c].max() == 255


def test_diff_map_normalisation_is_idempotent():
    rng = np.random.default_rng(2)
    m = metrics.abs_diff_map(rng.random((3, 6, 6)), rng.random((3, 6, 6))).astype(np.float64)
    again = metrics.abs_diff_map(m / 255.0, np.zeros_like(m))
    assert np.array_equal(again, m.astype(np.uint8))


def test_deviation_pixel_ratio():
    x = np.full((3, 4, 4), 100 / 255)
    assert metrics.deviation_pixel_ratio(x, x) == 0.0
    assert metrics.deviation_pixel_ratio(x + 2 / 255, x) == 1.0
    z = x.copy()
    z[0, 0, :2] += 1 / 255
    assert metrics.deviation_pixel_ratio(z, x) == pytest.approx(2 / 48)
    assert metrics.deviation_pixel_ratio(z, x, threshold=1) == 0.0


@given(hnp.arrays(np.float64, (3, 4, 4), elements=unit), hnp.arrays(np.float64, (3, 4, 4), elements=unit))
def test_ratio_zero_iff_quantised_images_match(z, x):
    same = np.array_equal(np.rint(z * 255), np.rint(x * 255))
    assert (metrics.deviation_pixel_ratio(z, x) == 0.0) == same


def test_grad_cam_contract():
    clf = tiny_classifier()
    x = np.random.default_rng(3).random((3, 8, 8))
    cam = metrics.grad_cam(clf, x, 2)
    assert cam.shape == (8, 8)
    assert cam.min() >= 0.0 and cam.max() <= 1.0
    if np.ptp(cam) > 0:
        assert cam.min() == 0.0 and cam.max() == 1.0
    with pytest.raises(UsageError):
        metrics.grad_cam(clf, x, 4)


def test_grad_cam_ignores_other_class_logits():
    clf = tiny_classifier()
    x = np.random.default_rng(4).random((3, 8, 8))
    before = metrics.grad_cam(clf, x, 1)
    bias = clf.layers[-1]["params"][1]
    bias.data = bias.data + np.array([5.0, 0.0, -3.0, 7.0])
    assert np.array_equal(metrics.grad_cam(clf, x, 1), before)


def test_bilinear_upsampling_preserves_constants_and_range():
    m = np.random.default_rng(5).random((4, 4))
    up = metrics._bilinear(m, 16, 16)
    assert up.shape == (16, 16)
    assert m.min() <= up.min() and up.max() <= m.max()
    assert np.allclose(metrics._bilinear(np.full((3, 3), 0.7), 8, 8), 0.7)


def _records(method, psnrs, success=None):
    success = success or [True] * len(psnrs)
    return [
        {"method": method, "image_id": f"img-{i}", "psnr": p, "ssim": 0.9, "success": s, "iterations": 10 + i,
         "deviation_pixel_ratio": 0.5}
        for i, (p, s) in enumerate(zip(psnrs, success))
    ]


def test_aggregate_mean_and_sample_std():
    row = metrics.aggregate(_records("MND", [30.0, 34.0])).row("MND")
    assert row["psnr_mean"] == 32.0
    assert row["psnr_std"] == pytest.approx(2.828, abs=1e-3)
    assert row["n"] == 2 and row["success_rate"] == 1.0


def test_aggregate_requires_two_records():
    with pytest.raises(UsageError):
        metrics.aggregate(_records("BIM", [30.0]))


def test_aggregate_uses_successes_and_flags_infinite_psnr():
    recs = _records("PGD", [30.0, 32.0, math.inf, 99.0], success=[True, True, True, False])
    row = metrics.aggregate(recs).row("PGD")
    assert row["n_success"] == 3 and row["success_rate"] == 0.75
    assert row["n_inf_excluded"] == 1
    assert row["psnr_mean"] == 31.0


def test_aggregate_order():
    recs = _records("b", [1.0, 2.0]) + _records("a", [1.0, 2.0]) + _records("c", [1.0, 2.0])
    rows = metrics.aggregate(recs, order=["c", "a"]).rows
    assert [r["method"] for r in rows] == ["c", "a", "b"]


def test_csv_round_trip_reproduces_aggregates(tmp_path):
    rng = np.random.default_rng(6)
    recs = []
    for m in ("MND", "BIM"):
        recs += _records(m, list(rng.uniform(25, 45, 5)) + [math.inf])
    path = tmp_path / "per_image.csv"
    metrics.write_csv(path, recs, metrics.RECORD_FIELDS)
    back = metrics.read_records_csv(path)
    assert back == recs
    a = metrics.aggregate(recs).rows
    b = metrics.aggregate(back).rows
    assert a == b
