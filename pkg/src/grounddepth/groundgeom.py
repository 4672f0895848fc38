"""Closed-form ground depth, ground slope and slope-class supervision.

Depth maps are plain ``float64`` arrays of shape (height, width) in metres.
``0`` marks a pixel without a valid depth; negative values are never stored.

Slope sign: ``alpha > 0`` means the surface height ``y_w`` grows with the
camera depth.  On a y-down rig that is a surface falling away from the
camera (downhill); on a y-up rig it is uphill.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .errors import ValidationError

SENTINEL = 0.0
DENOM_EPS = 1e-12
SLOPE_LIMIT = np.pi / 6
PROB_SUM_TOL = 1e-6
TIE_TOL = 1e-12

DEFAULT_BIN_RANGE_DEG = (-5.0, 5.0)
DEFAULT_BIN_COUNT = 11
DEFAULT_REL_TOL = 0.03


def _check_depth_map(depth, name="depth map") -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(d < 0):
        raise ValidationError(f"{name} contains negative depths")
    return d


def _depth_from_ratio(num, den) -> np.ndarray:
    """``num / den`` with the sentinel wherever the ray misses the surface."""
    num, den = np.broadcast_arrays(np.asarray(num, dtype=np.float64), np.asarray(den, dtype=np.float64))
    out = np.zeros(den.shape, dtype=np.float64)
    ok = np.abs(den) >= DENOM_EPS
    np.divide(num, den, out=out, where=ok)
    out[~(out > 0) | ~np.isfinite(out)] = SENTINEL
    return out


@dataclass(frozen=True, eq=False)
class SlopeMap:
    """Per-pixel slope angles (radians) with a validity mask."""

    angles: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if angles.ndim != 2 or valid.shape != angles.shape:
            raise ValidationError(
                f"slope angles and mask must be matching 2-D arrays, got {angles.shape} and {valid.shape}"
            )
        sel = angles[valid]
        if not np.all(np.isfinite(sel)):
            raise ValidationError("valid slope pixels must be finite")
        if np.any(np.abs(sel) > SLOPE_LIMIT):
            raise ValidationError("valid slope angles must lie within [-pi/6, pi/6]")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.angles.shape

    @classmethod
    def constant(cls, alpha: float, width: int, height: int) -> "SlopeMap":
        return cls(np.full((height, width), float(alpha)), np.ones((height, width), dtype=bool))


@dataclass(frozen=True, eq=False)
class SlopeBinning:
    """Ordered candidate slope angles ``class_angles`` in radians."""

    class_angles: np.ndarray

    def __post_init__(self):
        class_angles = np.asarray(self.class_angles, dtype=np.float64).ravel()
        if class_angles.size < 2:
            raise ValidationError("a slope binning needs at least 2 angles")
        if not np.all(np.isfinite(class_angles)):
            raise ValidationError("slope bin angles must be finite")
        if np.any(np.diff(class_angles) <= 0):
            raise ValidationError("slope bin angles must be strictly increasing")
        if class_angles[0] < -SLOPE_LIMIT - 1e-15 or class_angles[-1] > SLOPE_LIMIT + 1e-15:
            raise ValidationError("slope bin angles must lie within [-pi/6, pi/6]")
        class_angles.setflags(write=False)
        object.__setattr__(self, "class_angles", class_angles)

    @classmethod
    def evenly_spaced(cls, lo_deg: float = DEFAULT_BIN_RANGE_DEG[0], hi_deg: float = DEFAULT_BIN_RANGE_DEG[1],
                      count: int = DEFAULT_BIN_COUNT) -> "SlopeBinning":
        if count < 2:
            raise ValidationError("bin count must be >= 2")
        if not hi_deg > lo_deg:
            raise ValidationError(f"bin range must be increasing, got [{lo_deg}, {hi_deg}]")
        return cls(np.deg2rad(np.linspace(lo_deg, hi_deg, int(count))))

    def __len__(self) -> int:
        return self.class_angles.size

    @property
    def class_angles_deg(self) -> np.ndarray:
        return np.rad2deg(self.class_angles)

    @property
    def envelope(self):
        """Accepted angle interval; half a bin gap beyond each end class."""
        lo_gap = self.class_angles[1] - self.class_angles[0]
        hi_gap = self.class_angles[-1] - self.class_angles[-2]
        return self.class_angles[0] - lo_gap / 2, self.class_angles[-1] + hi_gap / 2

    def classify(self, alpha):
        """Nearest-angle class for each ``alpha`` (ties go to the lower index).

        Returns ``(classes, out_of_range)``; out-of-range angles are clamped to
        the boundary class and flagged.
        """
        alpha = np.asarray(alpha, dtype=np.float64)
        mids = (self.class_angles[:-1] + self.class_angles[1:]) / 2
        cls = np.searchsorted(mids, alpha, side="left")
        # An angle a rounding error above a midpoint is still a tie.
        above = np.clip(cls - 1, 0, mids.size - 1)
        tie = (cls > 0) & (np.abs(alpha - mids[above]) <= TIE_TOL)
        cls = np.where(tie, cls - 1, cls)
        lo, hi = self.envelope
        flagged = (alpha < lo) | (alpha > hi)
        return cls.astype(np.int64), flagged


@dataclass(frozen=True, eq=False)
class SparseDepth:
    """Sparse depth samples at pixel positions ``(u, v)`` with depth ``z`` (metres)."""

    u: np.ndarray
    v: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        u, v, z = (np.asarray(x, dtype=np.float64).ravel() for x in (self.u, self.v, self.z))
        if not (u.size == v.size == z.size):
            raise ValidationError("sparse sample arrays must have equal length")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and np.all(np.isfinite(z))):
            raise ValidationError("sparse samples must be finite")
        if np.any(z <= 0):
            raise ValidationError("sparse sample depths must be > 0")
        for name, val in (("u", u), ("v", v), ("z", z)):
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.z.size

    @classmethod
    def empty(cls) -> "SparseDepth":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_depth_map(cls, depth) -> "SparseDepth":
        d = _check_depth_map(depth)
        rows, cols = np.nonzero(d > 0)
        return cls(cols.astype(np.float64), rows.astype(np.float64), d[rows, cols])

    def pixel_indices(self, width: int, height: int):
        """Integer ``(rows, cols)`` of the pixels holding each sample."""
        cols = np.rint(self.u).astype(np.int64)
        rows = np.rint(self.v).astype(np.int64)
        if np.any((cols < 0) | (cols >= width) | (rows < 0) | (rows >= height)):
            raise ValidationError(f"sparse samples fall outside the {width}x{height} image")
        return rows, cols

    def scaled(self, factor: float) -> "SparseDepth":
        return SparseDepth(self.u, self.v, self.z * factor)


def planar_ground_depth(cam: CameraModel, width: int, height: int) -> np.ndarray:
    """Depth of the intersection of each pixel ray with the plane ``y_w = h``.

    Pixels on or above the vanishing line get the sentinel.
    """
    u, v = cam.pixel_grid(width, height)
    return _depth_from_ratio(cam.ground_height - cam.ray_origin[1], cam.ground_coefficient(u, v))


def undulated_ground_depth(cam: CameraModel, slope: SlopeMap, width=None, height=None) -> np.ndarray:
    """Ground depth under a per-pixel slope: the surface ``y_w = tan(alpha) z_c + h``."""
    rows, cols = slope.shape
    if (width is not None and width != cols) or (height is not None and height != rows):
        raise ValidationError(f"slope map is {cols}x{rows}, requested {width}x{height}")
    u, v = cam.pixel_grid(cols, rows)
    den = np.tan(slope.angles) - cam.ground_coefficient(u, v)
    out = _depth_from_ratio(cam.ray_origin[1] - cam.ground_height, den)
    out[~slope.valid] = SENTINEL
    return out


def slope_from_depth(cam: CameraModel, u, v, z_c):
    """Slope angle that places pixel ``(u, v)`` at camera depth ``z_c`` on the ground."""
    z_c = np.asarray(z_c, dtype=np.float64)
    if np.any(~(z_c > 0)):
        raise ValidationError("z_c must be > 0")
    alpha = np.arctan((cam.ray_origin[1] - cam.ground_height) / z_c + cam.ground_coefficient(u, v))
    return float(alpha) if alpha.ndim == 0 else alpha


@dataclass(frozen=True)
class SlopeLabel:
    u: float
    v: float
    cls: int
    alpha: float  # radians
    flagged: bool


def slope_labels_from_sparse(cam: CameraModel, sparse: SparseDepth, bins: SlopeBinning,
                             image_size=None) -> list:
    if len(sparse) == 0:
        return []
    size = image_size or cam.image_size
    if size is not None:
        sparse.pixel_indices(*size)
    alpha = np.atleast_1d(slope_from_depth(cam, sparse.u, sparse.v, sparse.z))
    cls, flagged = bins.classify(alpha)
    return [
        SlopeLabel(float(u), float(v), int(c), float(a), bool(f))
        for u, v, c, a, f in zip(sparse.u, sparse.v, cls, alpha, flagged)
    ]


def check_probabilities(probs, n_classes=None) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim < 1:
        raise ValidationError("probabilities need a trailing class axis")
    if n_classes is not None and p.shape[-1] != n_classes:
        raise ValidationError(f"expected {n_classes} classes, got {p.shape[-1]}")
    bad = ~np.all(np.isfinite(p) & (p >= 0) & (p <= 1), axis=-1)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"probabilities outside [0, 1] at pixel {idx}")
    dev = np.abs(p.sum(axis=-1) - 1.0)
    if np.any(dev > PROB_SUM_TOL):
        idx = tuple(int(i) for i in np.argwhere(dev > PROB_SUM_TOL)[0])
        raise ValidationError(f"probabilities do not sum to 1 at pixel {idx} (off by {dev[idx]:.3e})")
    return p


def soft_slope(probs, bins: SlopeBinning) -> SlopeMap:
    """Expected slope ``sum_i p_i tau_i`` for a (height, width, N) probability volume."""
    p = check_probabilities(probs, len(bins))
    if p.ndim != 3:
        raise ValidationError(f"probabilities must be (height, width, N), got {p.shape}")
    alpha = p @ bins.class_angles
    # Clip rounding excursions so the result stays a convex combination.
    alpha = np.clip(alpha, bins.class_angles[0], bins.class_angles[-1])
    return SlopeMap(alpha, np.ones(alpha.shape, dtype=bool))


def ground_consistency_mask(ground, sparse: SparseDepth, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """True for samples whose ground depth is valid and within ``rel_tol`` relative error."""
    g = _check_depth_map(ground, "ground depth")
    if not rel_tol > 0:
        raise ValidationError("rel_tol must be > 0")
    if len(sparse) == 0:
        return np.zeros(0, dtype=bool)
    rows, cols = sparse.pixel_indices(g.shape[1], g.shape[0])
    zg = g[rows, cols]
    return (zg > 0) & (np.abs(zg - sparse.z) / sparse.z < rel_tol)


def slope_histogram(labels, bins: SlopeBinning) -> np.ndarray:
    """Label count per slope class. Accepts ``SlopeLabel`` objects or class indices."""
    classes = np.array([lab.cls if isinstance(lab, SlopeLabel) else int(lab) for lab in labels], dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= len(bins)):
        raise ValidationError(f"label class outside [0, {len(bins)})")
    return np.bincount(classes, minlength=len(bins))


def vanishing_row(cam: CameraModel):
    """Row where the ground ray coefficient vanishes at the principal-point column, or None."""
    a = cam.ray_matrix
    if abs(a[1, 1]) < DENOM_EPS:
        return None
    cx = cam.K[0, 2]
    return float(-(a[1, 0] * cx + a[1, 2]) / a[1, 1])
