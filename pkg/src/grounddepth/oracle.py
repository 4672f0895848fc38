"""Synthetic terrain scenes with exact ground truth.

Depths here are computed without the closed-form ground formulas: rays are
built from ``R^T`` and ``K^-1`` directly, intersected with the terrain in
world coordinates, and the hit is mapped back to the camera frame.  That
keeps the oracle an independent check of :mod:`grounddepth.groundgeom`.

Terrain heights vary only along ``z_w`` and are measured from the point
``o``, the optical centre dropped onto the planar ground, so a ramp of
gradient ``g`` passes through ``o``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .errors import ValidationError
from .groundgeom import SLOPE_LIMIT, SlopeMap, SparseDepth

DEFAULT_STEP = 0.01
DEFAULT_MAX_DEPTH = 200.0
BISECT_TOL = 1e-9
PARALLEL_EPS = 1e-12
THREADS_ENV = "GROUNDDEPTH_THREADS"

TERRAIN_KINDS = ("plane", "ramp", "sine")


@dataclass(frozen=True)
class TerrainProfile:
    """Road profile ``y_w = f(z_w - z_o)``.

    * plane: ``f = base_height``
    * ramp:  ``f = base_height + gradient * dz``
    * sine:  ``f = base_height + amplitude * sin(2 pi dz / wavelength)``
    """

    kind: str
    base_height: float
    gradient: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 1.0

    def __post_init__(self):
        if self.kind not in TERRAIN_KINDS:
            raise ValidationError(f"terrain kind must be one of {TERRAIN_KINDS}, got {self.kind!r}")
        for name in ("base_height", "gradient", "amplitude", "wavelength"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"terrain {name} must be finite")
        if self.kind == "sine":
            if self.wavelength <= 0:
                raise ValidationError("sine terrain wavelength must be > 0")
            if self.amplitude < 0:
                raise ValidationError("sine terrain amplitude must be >= 0")

    @classmethod
    def plane(cls, base_height):
        return cls("plane", base_height)

    @classmethod
    def ramp(cls, base_height, gradient):
        return cls("ramp", base_height, gradient=gradient)

    @classmethod
    def sine(cls, base_height, amplitude, wavelength):
        return cls("sine", base_height, amplitude=amplitude, wavelength=wavelength)

    def height(self, dz):
        dz = np.asarray(dz, dtype=np.float64)
        if self.kind == "plane":
            return np.full(dz.shape, self.base_height)
        if self.kind == "ramp":
            return self.base_height + self.gradient * dz
        return self.base_height + self.amplitude * np.sin(2 * np.pi * dz / self.wavelength)

    def max_gradient(self) -> float:
        if self.kind == "ramp":
            return abs(self.gradient)
        if self.kind == "sine":
            return 2 * np.pi * self.amplitude / self.wavelength
        return 0.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "base_height": self.base_height}
        if self.kind == "ramp":
            d["gradient"] = self.gradient
        elif self.kind == "sine":
            d.update(amplitude=self.amplitude, wavelength=self.wavelength)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TerrainProfile":
        extra = set(d) - {"kind", "base_height", "gradient", "amplitude", "wavelength"}
        if extra:
            raise ValidationError(f"unknown terrain keys: {sorted(extra)}")
        try:
            kind, base = d["kind"], float(d["base_height"])
        except KeyError as exc:
            raise ValidationError(f"terrain block is missing {exc.args[0]!r}") from None
        return cls(kind, base, float(d.get("gradient", 0.0)), float(d.get("amplitude", 0.0)),
                   float(d.get("wavelength", 1.0)))


@dataclass(frozen=True, eq=False)
class OracleScene:
    cam: CameraModel
    terrain: TerrainProfile
    width: int
    height: int
    max_depth: float = DEFAULT_MAX_DEPTH
    step: float = DEFAULT_STEP

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("scene width and height must be >= 1")
        if not self.step > 0:
            raise ValidationError("ray-march step must be > 0")
        if not self.max_depth > self.step:
            raise ValidationError("max_depth must exceed the ray-march step")


def _world_rays(cam: CameraModel, width: int, height: int):
    """Optical centre and per-pixel world directions scaled to unit camera depth."""
    center = -cam.R.T @ cam.T
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1)
    cam_dirs = np.linalg.solve(cam.K, pix.reshape(-1, 3).T).T
    dirs = cam_dirs @ cam.R  # row-vector form of R^T @ d
    return center, dirs.reshape(height, width, 3)


def _camera_depth(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    return points @ cam.R[2] + cam.T[2]


def _plane_hits(center, dirs, normal, offset):
    """Ray parameter where ``normal . X = offset``; NaN when parallel or behind."""
    den = dirs @ normal
    num = offset - center @ normal
    t = np.full(den.shape, np.nan)
    ok = np.abs(den) >= PARALLEL_EPS
    t[ok] = num / den[ok]
    t[~(t > 0)] = np.nan
    return t


def _march(center, dirs, terrain: TerrainProfile, z0: float, max_depth: float, step: float):
    """First crossing of the ray height and the terrain, refined by bisection.

    Advances by ``max(step, |F| / L)`` where ``L`` bounds ``|dF/dt|``; the
    larger stride cannot skip a root, so no crossing is missed that a fixed
    ``step`` march would catch.
    """
    n = dirs.shape[0]

    def gap(t, idx):
        pts_y = center[1] + t * dirs[idx, 1]
        pts_z = center[2] + t * dirs[idx, 2]
        return pts_y - terrain.height(pts_z - z0)

    lip = np.abs(dirs[:, 1]) + terrain.max_gradient() * np.abs(dirs[:, 2])
    lip = np.maximum(lip, 1e-300)
    t_hit = np.full(n, np.nan)
    idx = np.arange(n)
    t_prev = np.zeros(n)
    f_prev = gap(t_prev, idx)
    while idx.size:
        stride = np.maximum(step, np.abs(f_prev) / lip[idx])
        t_next = np.minimum(t_prev + stride, max_depth)
        f_next = gap(t_next, idx)
        crossed = (np.sign(f_next) != np.sign(f_prev)) | (f_next == 0)
        if np.any(crossed):
            lo, hi = t_prev[crossed], t_next[crossed]
            sub = idx[crossed]
            f_lo = f_prev[crossed]
            while np.any(hi - lo > BISECT_TOL):
                mid = 0.5 * (lo + hi)
                f_mid = gap(mid, sub)
                left = (np.sign(f_mid) != np.sign(f_lo)) | (f_mid == 0)
                hi = np.where(left, mid, hi)
                lo = np.where(left, lo, mid)
                f_lo = np.where(left, f_lo, f_mid)
            t_hit[sub] = 0.5 * (lo + hi)
        done = crossed | (t_next >= max_depth)
        keep = ~done
        idx, t_prev, f_prev = idx[keep], t_next[keep], f_next[keep]
    return t_hit


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be an integer") from None


def _hit_points(scene: OracleScene):
    """World hit points (H, W, 3) and camera depths (H, W); NaN depth where no hit."""
    cam, terrain = scene.cam, scene.terrain
    center, dirs = _world_rays(cam, scene.width, scene.height)
    z0 = center[2]
    flat = dirs.reshape(-1, 3)

    kind = terrain.kind
    if kind == "sine" and terrain.amplitude == 0:
        kind = "plane"
    if kind == "plane":
        t = _plane_hits(center, flat, np.array([0.0, 1.0, 0.0]), terrain.base_height)
    elif kind == "ramp":
        g = terrain.gradient
        t = _plane_hits(center, flat, np.array([0.0, 1.0, -g]), terrain.base_height - g * z0)
    else:
        threads = _thread_count()
        chunks = np.array_split(np.arange(flat.shape[0]), threads)
        if threads == 1:
            t = _march(center, flat, terrain, z0, scene.max_depth, scene.step)
        else:
            with ThreadPoolExecutor(threads) as pool:
                parts = pool.map(lambda c: _march(center, flat[c], terrain, z0, scene.max_depth, scene.step), chunks)
                t = np.concatenate(list(parts))

    pts = center + t[:, None] * flat
    z_c = _camera_depth(cam, pts)
    miss = ~np.isfinite(z_c) | ~(z_c > 0) | (z_c > scene.max_depth)
    z_c[miss] = np.nan
    return pts.reshape(scene.height, scene.width, 3), z_c.reshape(scene.height, scene.width)


def oracle_ground_depth(scene: OracleScene) -> np.ndarray:
    """Camera depth of the first terrain hit per pixel; 0 when nothing is hit before ``max_depth``."""
    _, z_c = _hit_points(scene)
    return np.where(np.isfinite(z_c), z_c, 0.0)


def oracle_slope_map(scene: OracleScene) -> SlopeMap:
    """True slope ``arctan((y_w - h) / z_c)`` of every hit, relative to the camera's planar ground.

    Pixels without a hit, or whose slope exceeds the +-pi/6 envelope, are invalid.
    """
    pts, z_c = _hit_points(scene)
    valid = np.isfinite(z_c)
    alpha = np.zeros(z_c.shape)
    alpha[valid] = np.arctan((pts[..., 1][valid] - scene.cam.ground_height) / z_c[valid])
    valid &= np.abs(alpha) <= SLOPE_LIMIT
    alpha[~valid] = 0.0
    return SlopeMap(alpha, valid)


def oracle_sparse_samples(scene: OracleScene, n: int, seed: int = 0, depth=None) -> SparseDepth:
    """``n`` distinct valid pixels drawn uniformly with a seeded generator, in row-major order."""
    if n < 1:
        raise ValidationError("sample count must be >= 1")
    d = oracle_ground_depth(scene) if depth is None else np.asarray(depth, dtype=np.float64)
    flat_valid = np.flatnonzero(d > 0)
    if flat_valid.size == 0:
        raise ValidationError("scene has no valid ground pixels to sample")
    if n > flat_valid.size:
        raise ValidationError(f"requested {n} samples but only {flat_valid.size} pixels are valid")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(flat_valid, size=n, replace=False))
    rows, cols = np.unravel_index(pick, d.shape)
    return SparseDepth(cols.astype(np.float64), rows.astype(np.float64), d[rows, cols])


def random_camera(rng: np.random.Generator, width: int, height: int) -> CameraModel:
    """Random KITTI/DDAD-like rig: f in [50, 1500] px, principal point in frame,
    rotations up to 10 degrees per axis, h in [0.5, 2.5] m."""
    from .camera import intrinsics_matrix, rotation_from_euler

    fx = rng.uniform(50, 1500)
    fy = fx * rng.uniform(0.9, 1.1)
    fy = min(max(fy, 50.0), 1500.0)
    K = intrinsics_matrix(fx, fy, rng.uniform(0, width - 1), rng.uniform(0, height - 1))
    R = rotation_from_euler(*np.deg2rad(rng.uniform(-10, 10, size=3)))
    T = rng.uniform(-0.2, 0.2, size=3)
    ground = rng.uniform(0.5, 2.5)
    return CameraModel(K, R, T, ground, image_size=(width, height))
