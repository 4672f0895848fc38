import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from grounddepth.errors import NumericError, ValidationError
from grounddepth.groundgeom import SparseDepth
from grounddepth.metrics import (
    GARG_CROP,
    apply_eval_crop,
    binned_metrics,
    crop_bounds,
    depth_metrics_2d,
    format_table,
    pointcloud_f_iou,
)


def brute_force_f_iou(pred, gt, tau):
    """Exhaustive pairwise distances; independent of the k-d tree path."""
    dist = np.sqrt(((pred[:, None, :] - gt[None, :, :]) ** 2).sum(-1))
    p = np.mean(dist.min(axis=1) <= tau)
    r = np.mean(dist.min(axis=0) <= tau)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    iou = 0.0 if p + r == 0 else p * r / (p + r - p * r)
    return f, iou


def _samples(gt):
    return SparseDepth.from_depth_map(gt)


class TestDepthMetrics2D:
    def test_perfect(self, rng):
        gt = rng.uniform(1, 80, (10, 12))
        rep = depth_metrics_2d(gt, _samples(gt))
        assert (rep.abs_rel, rep.sq_rel, rep.rmse, rep.rmse_log, rep.silog) == (0, 0, 0, 0, 0)
        assert rep.n_pixels == 120

    def test_constant_ratio(self, rng):
        gt = rng.uniform(1, 80, (10, 12))
        rep = depth_metrics_2d(1.1 * gt, _samples(gt))
        assert rep.abs_rel == pytest.approx(0.1, abs=1e-9)
        assert rep.rmse_log == pytest.approx(math.log(1.1), abs=1e-9)
        assert rep.rmse_log == pytest.approx(0.09531, abs=1e-5)
        assert rep.silog == pytest.approx(0.0, abs=1e-9)

    def test_hand_values(self):
        pred = np.array([[6.0, 24.0]])
        gt = SparseDepth([0.0, 1.0], [0.0, 0.0], [5.0, 25.0])
        rep = depth_metrics_2d(pred, gt)
        assert rep.abs_rel == pytest.approx((1 / 5 + 1 / 25) / 2)
        assert rep.sq_rel == pytest.approx((1 / 5 + 1 / 25) / 2)
        assert rep.rmse == pytest.approx(1.0)
        d = np.log([6 / 5, 24 / 25])
        assert rep.rmse_log == pytest.approx(np.sqrt(np.mean(d**2)))
        assert rep.silog == pytest.approx(100 * np.sqrt(np.mean(d**2) - np.mean(d) ** 2))

    def test_cap_excludes_far(self):
        pred = np.array([[5.0, 999.0]])
        gt = SparseDepth([0.0, 1.0], [0.0, 0.0], [5.0, 90.0])
        assert depth_metrics_2d(pred, gt, cap=80).n_pixels == 1

    def test_no_overlap(self):
        with pytest.raises(NumericError):
            depth_metrics_2d(np.ones((2, 2)), SparseDepth.empty())

    def test_non_positive_prediction(self):
        with pytest.raises(NumericError):
            depth_metrics_2d(np.zeros((2, 2)), SparseDepth([0.0], [0.0], [3.0]))

    def test_silog_scale_invariance(self, rng):
        gt = rng.uniform(1, 80, (8, 8))
        pred = gt * rng.uniform(0.7, 1.3, gt.shape)
        base = depth_metrics_2d(pred, _samples(gt)).silog
        for c in (0.3, 2.0, 17.0):
            assert depth_metrics_2d(c * pred, _samples(gt), cap=1e9).silog == pytest.approx(base, abs=1e-9)

    def test_joint_scaling(self, rng):
        gt = rng.uniform(1, 80, (8, 8))
        pred = gt * rng.uniform(0.7, 1.3, gt.shape)
        a = depth_metrics_2d(pred, _samples(gt), cap=1e9)
        b = depth_metrics_2d(3 * pred, _samples(3 * gt), cap=1e9)
        assert b.abs_rel == pytest.approx(a.abs_rel, rel=1e-12)
        assert b.sq_rel == pytest.approx(3 * a.sq_rel, rel=1e-12)  # e^2/gt scales by c
        assert b.rmse == pytest.approx(3 * a.rmse, rel=1e-12)

    def test_zero_iff_equal(self, rng):
        gt = rng.uniform(1, 80, (5, 5))
        pred = gt.copy()
        pred[2, 3] *= 1.0 + 1e-6
        rep = depth_metrics_2d(pred, _samples(gt))
        assert all(getattr(rep, k) > 0 for k in ("abs_rel", "sq_rel", "rmse", "rmse_log", "silog"))


class TestPointCloud:
    def test_identical(self, rng):
        pts = rng.uniform(-5, 5, (50, 3))
        assert pointcloud_f_iou(pts, pts, 0.1) == (1.0, 1.0)

    def test_translated_far(self, rng):
        pts = rng.uniform(-5, 5, (50, 3))
        assert pointcloud_f_iou(pts + [1.0, 0, 0], pts, 0.1) == (0.0, 0.0)

    def test_outliers(self):
        gt = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        pred = np.vstack([gt, gt + 100.0])
        f, iou = pointcloud_f_iou(pred, gt, 0.5)
        assert brute_force_f_iou(pred, gt, 0.5) == pytest.approx((2 / 3, 0.5))
        assert f == pytest.approx(2 / 3) and iou == pytest.approx(0.5)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            gt = rng.uniform(0, 3, (rng.integers(1, 200), 3))
            pred = rng.uniform(0, 3, (rng.integers(1, 200), 3))
            tau = rng.uniform(0.05, 0.5)
            np.testing.assert_allclose(pointcloud_f_iou(pred, gt, tau), brute_force_f_iou(pred, gt, tau), rtol=1e-12)

    def test_rigid_invariance(self, rng):
        gt = rng.uniform(0, 3, (150, 3))
        pred = gt + rng.normal(0, 0.08, gt.shape)
        R = Rotation.from_euler("xyz", rng.uniform(-np.pi, np.pi, 3)).as_matrix()
        t = rng.uniform(-10, 10, 3)
        # tau away from any pair distance so rounding cannot flip a match
        a = pointcloud_f_iou(pred, gt, 0.1234567)
        b = pointcloud_f_iou(pred @ R.T + t, gt @ R.T + t, 0.1234567)
        assert a == pytest.approx(b)

    def test_empty(self):
        with pytest.raises(ValidationError):
            pointcloud_f_iou(np.empty((0, 3)), np.zeros((1, 3)))

    def test_one_to_one_matches_count_form(self, rng):
        gt = rng.uniform(0, 10, (40, 3))
        pred = gt.copy()
        pred[:10] += 5.0  # 30 exact matches, 10 misses on each side
        _, iou = pointcloud_f_iou(pred, gt, 0.01)
        assert iou == pytest.approx(30 / (40 + 40 - 30))

    def test_many_to_one_stays_bounded(self):
        gt = np.array([[0.0, 0, 0], [0.05, 0, 0], [0.0, 0.05, 0]])
        pred = np.array([[0.0, 0, 0]])
        assert pointcloud_f_iou(pred, gt, 0.1) == (1.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), tau=st.floats(0.01, 2))
    def test_f_at_least_iou(self, seed, tau):
        g = np.random.default_rng(seed)
        gt = g.uniform(0, 3, (g.integers(1, 60), 3))
        pred = g.uniform(0, 3, (g.integers(1, 60), 3))
        f, iou = pointcloud_f_iou(pred, gt, tau)
        assert 0 <= iou <= 1 and 0 <= f <= 1
        assert f >= iou - 1e-12


class TestCrop:
    def test_full_frame(self, rng):
        d = rng.uniform(0, 5, (7, 9))
        np.testing.assert_array_equal(apply_eval_crop(d, (0, 1, 0, 1)), d)

    def test_garg_bounds(self):
        assert crop_bounds(375, 1242, GARG_CROP) == (153, 371, 44, 1197)

    def test_garg_marks_outside_invalid(self):
        d = np.ones((375, 1242))
        out = apply_eval_crop(d, GARG_CROP)
        assert out.shape == d.shape
        assert out[153:371, 44:1197].all() and out.sum() == (371 - 153) * (1197 - 44)

    def test_errors_outside_crop_ignored(self, rng):
        gt = rng.uniform(1, 80, (375, 1242))
        pred = gt.copy()
        pred[:153] *= 2
        pred[:, 1197:] += 3
        rep = depth_metrics_2d(pred, SparseDepth.from_depth_map(apply_eval_crop(gt, GARG_CROP)))
        assert (rep.abs_rel, rep.sq_rel, rep.rmse, rep.rmse_log, rep.silog) == (0, 0, 0, 0, 0)

    @pytest.mark.parametrize("crop", [(0.5, 0.5, 0, 1), (0, 1, 0.8, 0.2), (-0.1, 1, 0, 1)])
    def test_degenerate(self, crop):
        with pytest.raises(ValidationError):
            apply_eval_crop(np.ones((10, 10)), crop)


class TestBinned:
    def test_single_bin_equals_overall(self, rng):
        gt = rng.uniform(1, 79, (10, 10))
        pred = gt * rng.uniform(0.8, 1.2, gt.shape)
        overall = depth_metrics_2d(pred, _samples(gt))
        (one,) = binned_metrics(pred, _samples(gt), [0, 80])
        assert one.report == overall

    def test_rmse_decomposition(self, rng):
        gt = rng.uniform(0.5, 79.9, (30, 40))
        pred = gt * rng.uniform(0.7, 1.3, gt.shape)
        overall = depth_metrics_2d(pred, _samples(gt))
        parts = binned_metrics(pred, _samples(gt), [0, 20, 40, 60, 80])
        n = sum(p.report.n_pixels for p in parts)
        assert n == overall.n_pixels
        weighted = sum(p.report.n_pixels * p.report.rmse**2 for p in parts) / n
        assert weighted == pytest.approx(overall.rmse**2, abs=1e-9)

    def test_two_samples_hand(self):
        pred = np.array([[6.0, 24.0]])
        gt = SparseDepth([0.0, 1.0], [0.0, 0.0], [5.0, 25.0])
        near, far, empty = binned_metrics(pred, gt, [0, 20, 40, 60])
        assert (near.lo, near.hi) == (0, 20)
        assert near.report.abs_rel == pytest.approx(0.2) and near.report.rmse == pytest.approx(1.0)
        assert near.report.rmse_log == pytest.approx(math.log(1.2))
        assert far.report.abs_rel == pytest.approx(0.04) and far.report.sq_rel == pytest.approx(0.04)
        assert far.report.rmse_log == pytest.approx(-math.log(0.96))
        assert empty.report.n_pixels == 0 and empty.report.rmse is None

    def test_left_closed(self):
        pred = np.array([[20.0]])
        gt = SparseDepth([0.0], [0.0], [20.0])
        a, b = binned_metrics(pred, gt, [0, 20, 40])
        assert (a.report.n_pixels, b.report.n_pixels) == (0, 1)

    def test_bad_edges(self):
        with pytest.raises(ValidationError):
            binned_metrics(np.ones((1, 1)), SparseDepth([0.0], [0.0], [1.0]), [0, 20, 10])


def test_table_column_order(rng):
    gt = rng.uniform(1, 80, (4, 4))
    text = format_table([("overall", depth_metrics_2d(gt, _samples(gt)))])
    header = text.splitlines()[0]
    cols = ["Abs Rel", "Sq Rel", "RMSE", "RMSE-log", "SILog", "F-score", "IoU"]
    assert [header.index(c) for c in cols] == sorted(header.index(c) for c in cols)
