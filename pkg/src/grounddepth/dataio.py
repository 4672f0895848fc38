"""File formats: calibration text, 16-bit PNG depth, PFM maps, sample and label text.

Byte-level layouts are documented in ``docs/formats.md``.  Every writer goes
through :func:`atomic_write`, so readers never observe a partial file.
"""

from __future__ import annotations

import io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraModel
from .errors import FormatError, GroundDepthError, ValidationError
from .groundgeom import SlopeLabel, SlopeMap, SparseDepth

PNG_SCALE = 256.0
PNG_MAX_DEPTH = 65535 / PNG_SCALE
INVALID_SLOPE = np.inf  # slope PFMs store invalid pixels as +inf

CALIB_KEYS = {"K": 9, "R": 9, "T": 3, "h": 1, "width": 1, "height": 1}
CALIB_REQUIRED = ("K", "R", "T", "h")


def _file_mode() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return 0o666 & ~mask


_FILE_MODE = _file_mode()


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc


# -- 16-bit PNG (KITTI convention) -------------------------------------------

def quantize_png16(depth) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("depth map must be finite and non-negative")
    if np.any(d >= 256.0):
        raise ValidationError(
            f"depth {d.max():.3f} m exceeds the 16-bit PNG range (< 256 m); save as PFM instead"
        )
    return np.floor(d * PNG_SCALE).astype(np.uint16)


def encode_depth_png16(depth) -> bytes:
    samples = quantize_png16(depth)
    if samples.ndim != 2:
        raise ValidationError(f"depth map must be 2-D, got shape {samples.shape}")
    buf = io.BytesIO()
    Image.fromarray(samples).save(buf, format="PNG")
    return buf.getvalue()


def write_depth_png16(depth, path) -> None:
    """Write ``floor(depth * 256)`` as a single-channel 16-bit PNG; 0 stays invalid."""
    atomic_write(path, encode_depth_png16(depth))


def read_depth_png16(path) -> np.ndarray:
    data = _read_bytes(path)
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise FormatError(f"{path}: not a readable PNG ({exc})") from exc
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG, found {img.format}")
    if img.mode not in ("I;16", "I;16B", "I;16L"):
        raise FormatError(f"{path}: expected single-channel 16-bit PNG, found mode {img.mode}")
    samples = np.array(img, dtype=np.uint16)
    return samples.astype(np.float64) / PNG_SCALE


# -- PFM ---------------------------------------------------------------------

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def encode_pfm(values) -> bytes:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValidationError(f"PFM writer takes a 2-D map, got shape {arr.shape}")
    arr32 = arr.astype("<f4")
    if np.any(np.isnan(arr32)):
        raise ValidationError("NaN values cannot be written to PFM")
    height, width = arr32.shape
    header = b"Pf\n%d %d\n-1.0\n" % (width, height)
    return header + np.ascontiguousarray(arr32[::-1]).tobytes()


def write_pfm(values, path) -> None:
    """Single-channel little-endian PFM, rows stored bottom-up."""
    atomic_write(path, encode_pfm(values))


def decode_pfm(data: bytes, name="<bytes>") -> np.ndarray:
    pos = 0
    lines = []
    for _ in range(3):
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{name}: truncated PFM header at byte {pos}")
        lines.append((pos, data[pos:end]))
        pos = end + 1
    (off0, magic), (off1, dims), (off2, scale_line) = lines
    if magic.strip() == b"PF":
        raise FormatError(f"{name}: colour PFM at byte {off0}; only single-channel 'Pf' maps are supported")
    if magic.strip() != b"Pf":
        raise FormatError(f"{name}: bad PFM magic {magic[:8]!r} at byte {off0}")
    m = _PFM_DIMS.match(dims)
    if not m:
        raise FormatError(f"{name}: malformed PFM dimensions {dims[:32]!r} at byte {off1}")
    width, height = int(m.group(1)), int(m.group(2))
    if width < 1 or height < 1:
        raise FormatError(f"{name}: PFM dimensions must be positive (byte {off1})")
    try:
        scale = float(scale_line.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise FormatError(f"{name}: malformed PFM scale {scale_line[:32]!r} at byte {off2}") from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(f"{name}: PFM scale must be non-zero and finite (byte {off2})")
    dtype = "<f4" if scale < 0 else ">f4"
    need = width * height * 4
    have = len(data) - pos
    if have < need:
        raise FormatError(f"{name}: truncated PFM payload: expected {need} bytes from byte {pos}, found {have}")
    if have > need:
        raise FormatError(f"{name}: {have - need} trailing bytes after PFM payload at byte {pos + need}")
    arr = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return arr[::-1].astype(np.float32)


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM into a top-down ``float32`` array."""
    return decode_pfm(_read_bytes(path), str(path))


def write_slope_pfm(slope: SlopeMap, path) -> None:
    write_pfm(np.where(slope.valid, slope.angles, INVALID_SLOPE), path)


def read_slope_pfm(path) -> SlopeMap:
    arr = read_pfm(path).astype(np.float64)
    valid = np.isfinite(arr)
    try:
        return SlopeMap(np.where(valid, arr, 0.0), valid)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


# -- depth maps by extension ----------------------------------------------------

def read_depth(path) -> np.ndarray:
    """Depth map from ``.png`` (16-bit) or ``.pfm``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        return read_depth_png16(path)
    if suffix == ".pfm":
        d = read_pfm(path).astype(np.float64)
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise FormatError(f"{path}: depth PFM must hold finite, non-negative values")
        return d
    raise FormatError(f"{path}: unsupported depth format {suffix!r} (use .png or .pfm)")


def write_depth(depth, path) -> Path:
    """Write by extension; ``.png`` maps with any depth >= 256 m are redirected to ``.pfm``.

    Returns the path actually written.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        if np.any(np.asarray(depth) >= 256.0):
            path = path.with_suffix(".pfm")
        else:
            write_depth_png16(depth, path)
            return path
    elif suffix != ".pfm":
        raise FormatError(f"{path}: unsupported depth format {suffix!r} (use .png or .pfm)")
    write_pfm(depth, path)
    return path


# -- calibration ---------------------------------------------------------------

def _parse_number(tok: str, lineno: int, integer=False):
    try:
        if integer:
            return int(tok)
        val = float(tok)
    except ValueError:
        kind = "integer" if integer else "real number"
        raise FormatError(f"line {lineno}: {tok!r} is not a {kind}") from None
    if not np.isfinite(val):
        raise FormatError(f"line {lineno}: non-finite value {tok!r}")
    return val


def parse_calibration_text(text: str, name="<calibration>") -> CameraModel:
    values, lines_of = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise FormatError(f"{name}: line {lineno}: expected 'key: values'")
        if key not in CALIB_KEYS:
            raise FormatError(f"{name}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise FormatError(f"{name}: line {lineno}: duplicate key {key!r} (first on line {lines_of[key]})")
        toks = rest.split()
        if len(toks) != CALIB_KEYS[key]:
            raise FormatError(f"{name}: line {lineno}: {key} expects {CALIB_KEYS[key]} values, got {len(toks)}")
        integer = key in ("width", "height")
        try:
            values[key] = [_parse_number(t, lineno, integer) for t in toks]
        except FormatError as exc:
            raise FormatError(f"{name}: {exc}") from None
        lines_of[key] = lineno
    for key in CALIB_REQUIRED:
        if key not in values:
            raise FormatError(f"{name}: missing required key {key!r}")
    if ("width" in values) != ("height" in values):
        raise FormatError(f"{name}: width and height must be given together")
    size = (values["width"][0], values["height"][0]) if "width" in values else None
    try:
        return CameraModel(
            K=np.reshape(values["K"], (3, 3)),
            R=np.reshape(values["R"], (3, 3)),
            T=values["T"],
            ground_height=values["h"][0],
            image_size=size,
        )
    except ValidationError as exc:
        msg = str(exc)
        key = next((k for k in ("K", "R", "T", "h") if msg.startswith(k) or f" {k} " in msg), None)
        where = f"line {lines_of[key]}: " if key else ""
        if key is None and "image size" in msg:
            where = f"line {lines_of['width']}: "
        raise ValidationError(f"{name}: {where}{msg}") from None


def parse_calibration(path) -> CameraModel:
    """Parse a ``key: values`` calibration file (K, R row-major; T; h; optional width/height)."""
    data = _read_bytes(path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 text (byte {exc.start})") from None
    return parse_calibration_text(text, str(path))


def format_calibration(cam: CameraModel) -> str:
    def nums(a):
        return " ".join(repr(float(x)) for x in np.ravel(a))

    lines = [f"K: {nums(cam.K)}", f"R: {nums(cam.R)}", f"T: {nums(cam.T)}", f"h: {float(cam.ground_height)!r}"]
    if cam.image_size is not None:
        lines += [f"width: {cam.image_size[0]}", f"height: {cam.image_size[1]}"]
    return "\n".join(lines) + "\n"


def write_calibration(cam: CameraModel, path) -> None:
    atomic_write(path, format_calibration(cam).encode("ascii"))


def camera_from_dict(d: dict) -> CameraModel:
    try:
        size = (int(d["width"]), int(d["height"])) if "width" in d else None
        return CameraModel(np.reshape(d["K"], (3, 3)), np.reshape(d["R"], (3, 3)), d["T"], d["h"], size)
    except KeyError as exc:
        raise ValidationError(f"camera block is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, GroundDepthError):
            raise
        raise ValidationError(f"camera block is malformed: {exc}") from None


# -- sparse samples and slope labels -------------------------------------------

def format_samples(samples: SparseDepth) -> str:
    out = ["# u v z_m"]
    out += [f"{u!r} {v!r} {z!r}" for u, v, z in zip(samples.u.tolist(), samples.v.tolist(), samples.z.tolist())]
    return "\n".join(out) + "\n"


def write_samples(samples: SparseDepth, path) -> None:
    atomic_write(path, format_samples(samples).encode("ascii"))


def read_samples(path) -> SparseDepth:
    """Whitespace-separated ``u v z`` lines (pixels, pixels, metres); ``#`` starts a comment."""
    text = _read_bytes(path).decode("utf-8", errors="strict")
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 3:
            raise FormatError(f"{path}: line {lineno}: expected 'u v z', got {len(toks)} fields")
        vals = [_parse_number(t, lineno) for t in toks]
        if vals[2] <= 0:
            raise ValidationError(f"{path}: line {lineno}: sample depth must be > 0")
        rows.append(vals)
    if not rows:
        return SparseDepth.empty()
    arr = np.array(rows)
    return SparseDepth(arr[:, 0], arr[:, 1], arr[:, 2])


def read_sparse(path) -> SparseDepth:
    """Sparse ground truth from a sample text file or any depth map (valid pixels only)."""
    if Path(path).suffix.lower() in (".png", ".pfm"):
        return SparseDepth.from_depth_map(read_depth(path))
    return read_samples(path)


def format_labels(labels) -> str:
    out = ["# u v class alpha_deg flag"]
    for lab in labels:
        out.append(f"{lab.u!r} {lab.v!r} {lab.cls} {float(np.rad2deg(lab.alpha))!r} {int(lab.flagged)}")
    return "\n".join(out) + "\n"


def write_labels(labels, path) -> None:
    atomic_write(path, format_labels(labels).encode("ascii"))


def read_labels(path) -> list:
    text = _read_bytes(path).decode("utf-8")
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if len(toks) != 5:
            raise FormatError(f"{path}: line {lineno}: expected 'u v class alpha_deg flag', got {len(toks)} fields")
        u, v = _parse_number(toks[0], lineno), _parse_number(toks[1], lineno)
        cls = _parse_number(toks[2], lineno, integer=True)
        alpha = float(np.deg2rad(_parse_number(toks[3], lineno)))
        flag = _parse_number(toks[4], lineno, integer=True)
        if flag not in (0, 1):
            raise FormatError(f"{path}: line {lineno}: flag must be 0 or 1")
        labels.append(SlopeLabel(u, v, cls, alpha, bool(flag)))
    return labels


def dump_json(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        atomic_write(path, text.encode("utf-8"))
    return text
