"""Pinhole camera model, world/pixel transforms and ray parameterization.

Conventions used throughout the package:

* ``(u, v)`` are continuous pixel coordinates with pixel centres at integer
  indices; the column index maps to ``u`` and the row index to ``v``.
* A world point ``X`` maps to the camera frame as ``R @ X + T`` and to pixels
  through ``K``; the camera-frame depth ``z_c`` is the third component.
* The planar ground is ``y_w = h``.  For a y-down rig mounted above the road
  (KITTI style) ``h`` is the mounting height, e.g. 1.65 m.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ValidationError

MATRIX_TOL = 1e-9


def _as_matrix(value, shape, name) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def check_intrinsics(K: np.ndarray) -> None:
    if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0:
        raise ValidationError("K must be upper-triangular")
    if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
        raise ValidationError("K must have positive focal lengths (K[0,0], K[1,1] > 0)")
    if K[2, 2] != 1.0:
        raise ValidationError("K bottom row must be (0, 0, 1)")


def check_rotation(R: np.ndarray, tol: float = MATRIX_TOL) -> None:
    ortho_err = np.max(np.abs(R.T @ R - np.eye(3)))
    if ortho_err > tol:
        raise ValidationError(
            f"R is not orthonormal: max |R^T R - I| = {ortho_err:.3e} exceeds {tol:g}"
        )
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise ValidationError(f"R is not a proper rotation: det(R) = {det:.12g}")


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Immutable calibrated camera plus the planar ground height.

    ``ray_matrix = R^-1 K^-1`` and ``ray_origin = R^-1 (-T)`` are derived at
    construction, so a pixel ray reads
    ``X(z_c) = ray_matrix @ [u, v, 1] * z_c + ray_origin``.  ``ray_origin`` is
    also the optical centre in world coordinates.
    """

    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    ground_height: float
    image_size: Optional[Tuple[int, int]] = None  # (width, height)
    ray_matrix: np.ndarray = field(init=False, repr=False, compare=False)
    ray_origin: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K = _as_matrix(self.K, (3, 3), "K")
        R = _as_matrix(self.R, (3, 3), "R")
        T = _as_matrix(np.ravel(self.T), (3,), "T")
        check_intrinsics(K)
        check_rotation(R)
        ground = float(self.ground_height)
        if not np.isfinite(ground):
            raise ValidationError("ground height h must be finite")
        if self.image_size is not None:
            w, ht = (int(s) for s in self.image_size)
            if w < 1 or ht < 1:
                raise ValidationError(f"image size must be positive, got {self.image_size}")
            object.__setattr__(self, "image_size", (w, ht))

        # Solving against K @ R keeps K R A = I tight even for large focal lengths.
        ray_matrix = np.linalg.solve(K @ R, np.eye(3))
        ray_origin = -np.linalg.solve(R, T)
        ray_matrix.setflags(write=False)
        ray_origin.setflags(write=False)
        fields = (("K", K), ("R", R), ("T", T), ("ground_height", ground),
                  ("ray_matrix", ray_matrix), ("ray_origin", ray_origin))
        for name, val in fields:
            object.__setattr__(self, name, val)

    @property
    def center(self) -> np.ndarray:
        """Optical centre in world coordinates."""
        return self.ray_origin

    @property
    def height_above_ground(self) -> float:
        """Signed distance from the optical centre to the plane ``y_w = h``."""
        return self.ground_height - float(self.ray_origin[1])

    def ground_coefficient(self, u, v):
        """``a21*u + a22*v + a23``: world-y change per metre of camera depth."""
        a = self.ray_matrix
        return a[1, 0] * np.asarray(u, dtype=np.float64) + a[1, 1] * np.asarray(v, dtype=np.float64) + a[1, 2]

    def pixel_grid(self, width: Optional[int] = None, height: Optional[int] = None):
        """Return ``(u, v)`` arrays of shape (height, width) for pixel centres."""
        if width is None or height is None:
            if self.image_size is None:
                raise ValidationError("image size unknown; pass width and height")
            width, height = self.image_size
        if width < 1 or height < 1:
            raise ValidationError(f"width and height must be >= 1, got {width}x{height}")
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        return u, v


def build_camera(K, R, T, ground_height: float, image_size=None) -> CameraModel:
    return CameraModel(K=K, R=R, T=T, ground_height=ground_height, image_size=image_size)


def intrinsics_matrix(fx: float, fy: float, cx: float, cy: float, skew: float = 0.0) -> np.ndarray:
    return np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]], dtype=np.float64)


def ray_point(cam: CameraModel, u, v, z_c):
    """World point at camera depth ``z_c`` along the ray through pixel ``(u, v)``.

    Accepts scalars or broadcastable arrays; returns an array whose last axis
    holds ``(x_w, y_w, z_w)``.
    """
    u, v, z_c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (u, v, z_c)))
    if np.any(~(z_c > 0)):
        raise ValidationError("z_c must be > 0 (point at or behind the optical centre)")
    m, o = cam.ray_matrix, cam.ray_origin
    out = np.empty(u.shape + (3,), dtype=np.float64)
    for i in range(3):
        out[..., i] = (m[i, 0] * u + m[i, 1] * v + m[i, 2]) * z_c + o[i]
    return out


def project(cam: CameraModel, points):
    """Project world points (..., 3) to ``(u, v, z_c)`` stacked on the last axis."""
    p = np.asarray(points, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValidationError(f"points must have a trailing axis of length 3, got {p.shape}")
    cam_pts = p @ cam.R.T + cam.T
    z_c = cam_pts[..., 2]
    if np.any(~(z_c > 0)):
        raise ValidationError("point is behind the camera (z_c <= 0)")
    pix = cam_pts @ cam.K.T
    return np.stack([pix[..., 0] / z_c, pix[..., 1] / z_c, z_c], axis=-1)


def unproject_depth_map(cam: CameraModel, depth: np.ndarray) -> np.ndarray:
    """World points (N, 3) for every pixel with positive depth, in row-major order."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValidationError(f"depth map must be 2-D, got shape {depth.shape}")
    rows, cols = np.nonzero(depth > 0)
    if rows.size == 0:
        return np.empty((0, 3), dtype=np.float64)
    return ray_point(cam, cols.astype(np.float64), rows.astype(np.float64), depth[rows, cols])


def rescale_intrinsics(cam: CameraModel, s_x: float, s_y: float) -> CameraModel:
    """Scale the first two rows of ``K`` so projections map ``(u, v) -> (s_x u, s_y v)``.

    The stored image size, when known, is scaled and rounded to whole pixels.
    """
    if not (s_x > 0 and s_y > 0) or not np.isfinite(s_x) or not np.isfinite(s_y):
        raise ValidationError(f"scale factors must be positive and finite, got ({s_x}, {s_y})")
    K = np.diag([float(s_x), float(s_y), 1.0]) @ cam.K
    size = None
    if cam.image_size is not None:
        w, ht = cam.image_size
        size = (max(1, int(round(w * s_x))), max(1, int(round(ht * s_y))))
    return CameraModel(K=K, R=cam.R, T=cam.T, ground_height=cam.ground_height, image_size=size)


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rotation ``Rz(roll) @ Rx(pitch) @ Ry(yaw)`` from angles in radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return rz @ rx @ ry
