"""Attention-weighted ground/residual fusion and the training objective."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ValidationError
from .groundgeom import SparseDepth, _check_depth_map, check_probabilities

DEFAULT_LAMBDA_CLS = 0.1
DEFAULT_LAMBDA_SI = 0.85
PROB_FLOOR = 1e-12


def check_attention(atten) -> np.ndarray:
    w = np.asarray(atten, dtype=np.float64)
    if w.ndim != 2:
        raise ValidationError(f"attention map must be 2-D, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any((w < 0) | (w > 1)):
        raise ValidationError("attention weights must lie in [0, 1]")
    return w


def blend_depth(ground, residual, atten) -> np.ndarray:
    """``w * ground + (1 - w) * residual``; ground sentinel pixels fall back to the residual."""
    g = _check_depth_map(ground, "ground depth")
    r = _check_depth_map(residual, "residual depth")
    w = check_attention(atten)
    if not (g.shape == r.shape == w.shape):
        raise ValidationError(f"map shapes differ: ground {g.shape}, residual {r.shape}, attention {w.shape}")
    w = np.where(g > 0, w, 0.0)
    out = w * g + (1.0 - w) * r
    # keep rounding from stepping outside the two inputs
    return np.clip(out, np.minimum(g, r), np.maximum(g, r), out=out)


def _sample_pairs(pred, gt: SparseDepth):
    p = _check_depth_map(pred, "prediction")
    rows, cols = gt.pixel_indices(p.shape[1], p.shape[0])
    pv = p[rows, cols]
    ok = pv > 0
    return pv[ok], gt.z[ok]


def silog_loss(pred_vals: np.ndarray, gt_vals: np.ndarray, lambda_si: float = DEFAULT_LAMBDA_SI) -> float:
    d = np.log(pred_vals) - np.log(gt_vals)
    mean = d.mean()
    var = np.mean((d - mean) ** 2)
    # mean(d^2) - lambda * mean(d)^2, arranged to stay non-negative for lambda <= 1
    return float(var + (1.0 - lambda_si) * mean * mean)


def regression_loss(pred, gt: SparseDepth, lambda_si: float = DEFAULT_LAMBDA_SI,
                    loss_fn: Callable = None) -> float:
    """Depth regression loss over samples where both prediction and target are valid.

    Defaults to the scale-invariant log loss; ``loss_fn(pred_vals, gt_vals)``
    replaces it.
    """
    pv, gv = _sample_pairs(pred, gt)
    if pv.size == 0:
        raise NumericError("no ground-truth sample overlaps a valid predicted pixel")
    if loss_fn is not None:
        return float(loss_fn(pv, gv))
    return silog_loss(pv, gv, lambda_si)


def slope_classification_loss(probs, labels) -> float:
    """Mean cross-entropy ``-ln p[label]`` with probabilities floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValidationError("slope classification loss needs at least one label")
    p = check_probabilities(np.asarray(probs, dtype=np.float64).reshape(labels.size, -1))
    n = p.shape[1]
    if labels.min() < 0 or labels.max() >= n:
        raise ValidationError(f"labels must lie in [0, {n})")
    picked = np.clip(p[np.arange(labels.size), labels], PROB_FLOOR, 1.0)
    return float(np.mean(-np.log(picked)))


@dataclass(frozen=True)
class LossBreakdown:
    l_reg: float
    l_cls: float
    lambda_cls: float
    adaptive: bool
    total: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def total_loss(l_reg: float, l_cls: float, lambda_cls: float = DEFAULT_LAMBDA_CLS,
               adaptive: bool = True) -> LossBreakdown:
    for name, val in (("l_reg", l_reg), ("l_cls", l_cls), ("lambda_cls", lambda_cls)):
        if not np.isfinite(val) or val < 0:
            raise ValidationError(f"{name} must be finite and >= 0, got {val}")
    total = float(l_reg) + float(lambda_cls) * float(l_cls) if adaptive else float(l_reg)
    return LossBreakdown(float(l_reg), float(l_cls), float(lambda_cls), bool(adaptive), total)
