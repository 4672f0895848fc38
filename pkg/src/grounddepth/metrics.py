"""Depth evaluation: 2-D error metrics, point-cloud F-score/IoU, cropping, distance bins."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import NumericError, ValidationError
from .groundgeom import SparseDepth, _check_depth_map

KITTI_CAP = 80.0
DDAD_CAP = 200.0
DEFAULT_TAU = 0.1

# Garg crop as fractions of (top, bottom, left, right).
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)
FULL_CROP = (0.0, 1.0, 0.0, 1.0)

TABLE_COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "silog", "f_score", "iou")
TABLE_HEADERS = ("Abs Rel", "Sq Rel", "RMSE", "RMSE-log", "SILog", "F-score", "IoU")


@dataclass
class MetricReport:
    n_pixels: int
    abs_rel: Optional[float] = None
    sq_rel: Optional[float] = None
    rmse: Optional[float] = None
    rmse_log: Optional[float] = None
    silog: Optional[float] = None
    f_score: Optional[float] = None
    iou: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _eval_pairs(pred, gt: SparseDepth, cap: float):
    p = _check_depth_map(pred, "prediction")
    if not cap > 0:
        raise ValidationError("depth cap must be > 0")
    if len(gt) == 0:
        return np.empty(0), np.empty(0), np.empty(0, dtype=bool)
    rows, cols = gt.pixel_indices(p.shape[1], p.shape[0])
    keep = gt.z <= cap
    return p[rows, cols][keep], gt.z[keep], keep


def metrics_from_values(pv: np.ndarray, gv: np.ndarray) -> MetricReport:
    if pv.size == 0:
        raise NumericError("no valid ground-truth sample to evaluate")
    if np.any(pv <= 0):
        raise NumericError(f"{int(np.sum(pv <= 0))} valid samples have non-positive predictions")
    e = pv - gv
    d = np.log(pv) - np.log(gv)
    d_mean = d.mean()
    return MetricReport(
        n_pixels=int(pv.size),
        abs_rel=float(np.mean(np.abs(e) / gv)),
        sq_rel=float(np.mean(e * e / gv)),
        rmse=float(np.sqrt(np.mean(e * e))),
        rmse_log=float(np.sqrt(np.mean(d * d))),
        # two-pass variance; equals mean(d^2) - mean(d)^2 without cancellation
        silog=float(100.0 * np.sqrt(np.mean((d - d_mean) ** 2))),
    )


def depth_metrics_2d(pred, gt: SparseDepth, cap: float = KITTI_CAP) -> MetricReport:
    """Abs Rel, Sq Rel, RMSE, RMSE-log and SILog (x100) over samples with ``0 < gt <= cap``."""
    pv, gv, _ = _eval_pairs(pred, gt, cap)
    return metrics_from_values(pv, gv)


def _check_cloud(cloud, name) -> np.ndarray:
    c = np.asarray(cloud, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 3:
        raise ValidationError(f"{name} must have shape (N, 3), got {c.shape}")
    if c.shape[0] == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(c)):
        raise ValidationError(f"{name} has non-finite coordinates")
    return c


def pointcloud_f_iou(pred, gt, tau: float = DEFAULT_TAU):
    """Threshold-matched F-score and IoU between two point clouds.

    A point matches when its exact nearest neighbour in the other cloud lies
    within ``tau`` metres.  Precision counts matched predicted points, recall
    matched ground-truth points, and ``IoU = P R / (P + R - P R)``.  With
    one-to-one matches that is ``TP / (|pred| + |gt| - TP)``; the ratio form
    stays within [0, 1] when several points share one neighbour.
    """
    p = _check_cloud(pred, "predicted cloud")
    g = _check_cloud(gt, "ground-truth cloud")
    if not tau > 0:
        raise ValidationError("tau must be > 0")
    d_pred, _ = cKDTree(g).query(p, k=1)
    d_gt, _ = cKDTree(p).query(g, k=1)
    precision = float(np.mean(d_pred <= tau))
    recall = float(np.mean(d_gt <= tau))
    if precision + recall == 0:
        f_score = 0.0
    else:
        f_score = 2 * precision * recall / (precision + recall)
    union = precision + recall - precision * recall
    iou = 0.0 if union == 0 else precision * recall / union
    return f_score, iou


def crop_bounds(height: int, width: int, crop: Sequence[float] = GARG_CROP):
    top, bottom, left, right = (float(c) for c in crop)
    if not all(0.0 <= c <= 1.0 for c in (top, bottom, left, right)):
        raise ValidationError(f"crop fractions must lie in [0, 1], got {crop}")
    r0, r1 = math.floor(top * height), math.floor(bottom * height)
    c0, c1 = math.floor(left * width), math.floor(right * width)
    if not (r0 < r1 and c0 < c1):
        raise ValidationError(f"crop {crop} is empty on a {width}x{height} image")
    return r0, r1, c0, c1


def apply_eval_crop(depth, crop: Sequence[float] = GARG_CROP) -> np.ndarray:
    """Copy of ``depth`` with everything outside the crop window set to the sentinel."""
    d = _check_depth_map(depth)
    r0, r1, c0, c1 = crop_bounds(d.shape[0], d.shape[1], crop)
    out = np.zeros_like(d)
    out[r0:r1, c0:c1] = d[r0:r1, c0:c1]
    return out


def crop_samples(gt: SparseDepth, width: int, height: int, crop: Sequence[float] = GARG_CROP) -> SparseDepth:
    r0, r1, c0, c1 = crop_bounds(height, width, crop)
    rows, cols = gt.pixel_indices(width, height)
    keep = (rows >= r0) & (rows < r1) & (cols >= c0) & (cols < c1)
    return SparseDepth(gt.u[keep], gt.v[keep], gt.z[keep])


def check_bin_edges(edges) -> np.ndarray:
    e = np.asarray(edges, dtype=np.float64).ravel()
    if e.size < 2:
        raise ValidationError("distance bins need at least 2 edges")
    if e[0] < 0 or np.any(np.diff(e) <= 0) or not np.all(np.isfinite(e)):
        raise ValidationError("distance bin edges must be finite, non-negative and strictly increasing")
    return e


@dataclass
class BinnedReport:
    lo: float
    hi: float
    report: MetricReport

    def to_dict(self) -> dict:
        return {"interval": [self.lo, self.hi], **self.report.to_dict()}


def binned_metrics(pred, gt: SparseDepth, edges, cap: float = KITTI_CAP) -> List[BinnedReport]:
    """Per-interval metrics; each sample goes to the ``[lo, hi)`` interval holding its gt depth."""
    e = check_bin_edges(edges)
    pv, gv, _ = _eval_pairs(pred, gt, cap)
    out = []
    for lo, hi in zip(e[:-1], e[1:]):
        sel = (gv >= lo) & (gv < hi)
        if not np.any(sel):
            rep = MetricReport(n_pixels=0)
        else:
            rep = metrics_from_values(pv[sel], gv[sel])
        out.append(BinnedReport(float(lo), float(hi), rep))
    return out


def format_table(rows) -> str:
    """Aligned text table; ``rows`` is a sequence of ``(label, MetricReport)``."""
    label_w = max([len("Split")] + [len(str(lbl)) for lbl, _ in rows])
    col_w = max(len(hd) for hd in TABLE_HEADERS) + 2
    lines = ["Split".ljust(label_w) + "".join(hd.rjust(col_w) for hd in TABLE_HEADERS) + "N".rjust(col_w)]
    for lbl, rep in rows:
        cells = []
        for key in TABLE_COLUMNS:
            val = getattr(rep, key)
            cells.append(("-" if val is None else f"{val:.3f}").rjust(col_w))
        lines.append(str(lbl).ljust(label_w) + "".join(cells) + str(rep.n_pixels).rjust(col_w))
    return "\n".join(lines)
