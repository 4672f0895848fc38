"""Command-line entry point: ``grounddepth <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numeric error.
Angles on the command line are degrees; files store radians unless noted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .blendloss import blend_depth
from .camera import rescale_intrinsics, unproject_depth_map
from .errors import FormatError, NumericError, ValidationError
from .groundgeom import (
    DEFAULT_BIN_COUNT,
    DEFAULT_BIN_RANGE_DEG,
    SlopeBinning,
    SparseDepth,
    planar_ground_depth,
    slope_histogram,
    slope_labels_from_sparse,
    undulated_ground_depth,
    vanishing_row,
)
from .metrics import (
    FULL_CROP,
    GARG_CROP,
    KITTI_CAP,
    DEFAULT_TAU,
    binned_metrics,
    crop_samples,
    depth_metrics_2d,
    format_table,
    pointcloud_f_iou,
)
from .oracle import (
    DEFAULT_MAX_DEPTH,
    DEFAULT_STEP,
    OracleScene,
    TerrainProfile,
    oracle_ground_depth,
    oracle_slope_map,
    oracle_sparse_samples,
)

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _float_list(text: str):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _crop(text: str):
    key = text.strip().lower()
    if key == "garg":
        return GARG_CROP
    if key in ("none", "full"):
        return FULL_CROP
    vals = _float_list(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("crop takes 'garg', 'none' or four fractions top,bottom,left,right")
    return tuple(vals)


def _bins(args) -> SlopeBinning:
    lo, hi = args.bin_range
    return SlopeBinning.evenly_spaced(lo, hi, args.bin_count)


def _add_bin_args(p):
    p.add_argument("--bin-range", nargs=2, type=float, metavar=("LO_DEG", "HI_DEG"),
                   default=list(DEFAULT_BIN_RANGE_DEG),
                   help="slope class range in degrees (default: -5 5)")
    p.add_argument("--bin-count", type=int, default=DEFAULT_BIN_COUNT,
                   help="number of evenly spaced slope classes (integer, default: 11)")


def _image_size(cam, args):
    width = args.width or (cam.image_size[0] if cam.image_size else None)
    height = args.height or (cam.image_size[1] if cam.image_size else None)
    if width is None or height is None:
        raise ValidationError("image size unknown: add width/height to the calibration or pass --width/--height")
    return width, height


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_ground(args) -> int:
    cam = dataio.parse_calibration(args.calib)
    if args.adaptive:
        slope = dataio.read_slope_pfm(args.adaptive)
        if args.width or args.height or cam.image_size:
            w, h = _image_size(cam, args)
            if (h, w) != slope.shape:
                raise ValidationError(f"slope map is {slope.shape[1]}x{slope.shape[0]}, image is {w}x{h}")
        depth = undulated_ground_depth(cam, slope)
    else:
        w, h = _image_size(cam, args)
        depth = planar_ground_depth(cam, w, h)
    written = dataio.write_depth(depth, args.out)
    if written != Path(args.out):
        _say(f"depth exceeds the 16-bit PNG range; wrote PFM to {written}")
    vrow = vanishing_row(cam)
    rows = np.nonzero(np.any(depth > 0, axis=1))[0]
    print(f"valid pixels: {int(np.count_nonzero(depth > 0))}")
    print(f"vanishing row: {'none' if vrow is None else f'{vrow:.3f}'}")
    print(f"first ground row: {int(rows[0]) if rows.size else 'none'}")
    return EXIT_OK


def cmd_slope_labels(args) -> int:
    cam = dataio.parse_calibration(args.calib)
    sparse = dataio.read_sparse(args.sparse)
    size = None
    if args.width or args.height or cam.image_size:
        size = _image_size(cam, args)
    labels = slope_labels_from_sparse(cam, sparse, _bins(args), image_size=size)
    dataio.write_labels(labels, args.out)
    flagged = sum(lab.flagged for lab in labels)
    print(f"labels: {len(labels)} (out of range, clamped: {flagged})")
    return EXIT_OK


def cmd_blend(args) -> int:
    ground = dataio.read_depth(args.ground)
    residual = dataio.read_depth(args.residual)
    atten = dataio.read_pfm(args.attention).astype(np.float64)
    out = blend_depth(ground, residual, atten)
    written = dataio.write_depth(out, args.out)
    if written != Path(args.out):
        _say(f"depth exceeds the 16-bit PNG range; wrote PFM to {written}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = dataio.read_depth(args.pred)
    gt = dataio.read_sparse(args.gt)
    height, width = pred.shape
    gt = crop_samples(gt, width, height, args.crop)
    keep = gt.z <= args.cap
    gt = SparseDepth(gt.u[keep], gt.v[keep], gt.z[keep])
    report = depth_metrics_2d(pred, gt, args.cap)
    if args.calib:
        cam = dataio.parse_calibration(args.calib)
        rows, cols = gt.pixel_indices(width, height)
        gt_map = np.zeros_like(pred)
        gt_map[rows, cols] = gt.z
        pred_map = np.zeros_like(pred)
        pred_map[rows, cols] = pred[rows, cols]
        report.f_score, report.iou = pointcloud_f_iou(
            unproject_depth_map(cam, pred_map), unproject_depth_map(cam, gt_map), args.tau
        )
    result = {
        "crop": list(args.crop),
        "cap": args.cap,
        "tau": args.tau if args.calib else None,
        "overall": report.to_dict(),
    }
    table_rows = [("overall", report)]
    if args.bins:
        binned = binned_metrics(pred, gt, args.bins, args.cap)
        result["bins"] = [b.to_dict() for b in binned]
        table_rows += [(f"[{b.lo:g}, {b.hi:g})", b.report) for b in binned]
    if args.out:
        dataio.dump_json(result, args.out)
    if args.json:
        sys.stdout.write(dataio.dump_json(result))
    else:
        print(format_table(table_rows))
    return EXIT_OK


def _load_scene(path) -> OracleScene:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise FormatError(f"{path}: scene must be a JSON object")
    if "calib" in cfg:
        cam = dataio.parse_calibration(Path(path).parent / cfg["calib"])
    elif "camera" in cfg:
        cam = dataio.camera_from_dict(cfg["camera"])
    else:
        raise ValidationError(f"{path}: scene needs a 'camera' block or a 'calib' path")
    if "terrain" not in cfg:
        raise ValidationError(f"{path}: scene needs a 'terrain' block")
    terrain = TerrainProfile.from_dict(cfg["terrain"])
    width = cfg.get("width", cam.image_size[0] if cam.image_size else None)
    height = cfg.get("height", cam.image_size[1] if cam.image_size else None)
    if width is None or height is None:
        raise ValidationError(f"{path}: scene image size unknown")
    return OracleScene(cam, terrain, int(width), int(height),
                       float(cfg.get("max_depth", DEFAULT_MAX_DEPTH)), float(cfg.get("step", DEFAULT_STEP)))


def cmd_synth(args) -> int:
    scene = _load_scene(args.scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    depth = oracle_ground_depth(scene)
    slope = oracle_slope_map(scene)
    dataio.write_pfm(depth, out / "depth.pfm")
    dataio.write_slope_pfm(slope, out / "slope.pfm")
    n_valid = int(np.count_nonzero(depth > 0))
    files = ["depth.pfm", "slope.pfm"]
    if args.samples:
        samples = oracle_sparse_samples(scene, min(args.samples, n_valid) if n_valid else args.samples,
                                        seed=args.seed, depth=depth)
        dataio.write_samples(samples, out / "samples.txt")
        files.append("samples.txt")
    print(f"valid pixels: {n_valid}; wrote {', '.join(files)} to {out}")
    return EXIT_OK


def cmd_rescale(args) -> int:
    cam = rescale_intrinsics(dataio.parse_calibration(args.calib), args.sx, args.sy)
    dataio.write_calibration(cam, args.out)
    return EXIT_OK


def cmd_slope_hist(args) -> int:
    bins = _bins(args)
    labels = []
    for path in args.labels:
        labels.extend(dataio.read_labels(path))
    counts = slope_histogram(labels, bins)
    result = {
        "class_angles_deg": [float(t) for t in bins.class_angles_deg],
        "counts": [int(c) for c in counts],
        "total": int(counts.sum()),
        "flagged": int(sum(lab.flagged for lab in labels)),
    }
    text = dataio.dump_json(result, args.out)
    if not args.out:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grounddepth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground-depth map from a calibration (planar or with a slope map)")
    p.add_argument("calib", help="calibration file (K, R, T in pixels/metres; h in metres)")
    p.add_argument("--adaptive", metavar="SLOPE_PFM",
                   help="per-pixel slope map in radians (PFM, +inf = invalid); enables the undulated ground")
    p.add_argument("--width", type=int, help="image width in pixels (overrides the calibration)")
    p.add_argument("--height", type=int, help="image height in pixels (overrides the calibration)")
    p.add_argument("--out", required=True, help="output depth map in metres (.png 16-bit or .pfm)")
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("slope-labels", help="slope class labels from sparse ground depth")
    p.add_argument("calib", help="calibration file (pixels/metres)")
    p.add_argument("sparse", help="sparse ground samples: 'u v z' text (pixels, pixels, metres) or depth map")
    _add_bin_args(p)
    p.add_argument("--width", type=int, help="image width in pixels for bounds checks")
    p.add_argument("--height", type=int, help="image height in pixels for bounds checks")
    p.add_argument("--out", required=True, help="label file: 'u v class alpha_deg flag' per line")
    p.set_defaults(func=cmd_slope_labels)

    p = sub.add_parser("blend", help="attention-weighted fusion of ground and residual depth")
    p.add_argument("ground", help="ground depth map in metres (.png/.pfm)")
    p.add_argument("residual", help="residual depth map in metres (.png/.pfm)")
    p.add_argument("attention", help="attention weights in [0, 1] (unitless, PFM)")
    p.add_argument("--out", required=True, help="blended depth map in metres (.png/.pfm)")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("eval", help="2-D depth metrics and optional 3-D point-cloud metrics")
    p.add_argument("pred", help="predicted depth map in metres (.png/.pfm)")
    p.add_argument("gt", help="ground truth: depth map in metres (.png/.pfm) or 'u v z' sample text")
    p.add_argument("--crop", type=_crop, default=FULL_CROP,
                   help="'garg', 'none' (default) or top,bottom,left,right as fractions of the image")
    p.add_argument("--cap", type=float, default=KITTI_CAP,
                   help="maximum ground-truth depth in metres (default: 80; 200 for DDAD)")
    p.add_argument("--bins", type=_float_list,
                   help="distance bin edges in metres, e.g. 0,20,40,60,80")
    p.add_argument("--calib", help="calibration file; enables F-score/IoU on unprojected clouds")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU,
                   help="point-cloud match distance in metres (default: 0.1)")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="render oracle depth, slope and samples for a terrain scene")
    p.add_argument("scene", help="scene JSON: camera block (pixels/metres) or calib path, terrain block (metres)")
    p.add_argument("--out-dir", required=True, help="directory for depth.pfm (metres), slope.pfm (radians), samples.txt")
    p.add_argument("--samples", type=int, default=0, help="number of sparse samples (pixels) to draw; 0 = none")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (integer)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rescale", help="rescale intrinsics for a resized image")
    p.add_argument("calib", help="calibration file (pixels/metres)")
    p.add_argument("--sx", type=float, required=True, help="horizontal scale factor (unitless, > 0)")
    p.add_argument("--sy", type=float, required=True, help="vertical scale factor (unitless, > 0)")
    p.add_argument("--out", required=True, help="output calibration file")
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("slope-hist", help="slope class histogram over label files")
    p.add_argument("labels", nargs="+", help="label files ('u v class alpha_deg flag'; angles in degrees)")
    _add_bin_args(p)
    p.add_argument("--out", help="write the JSON histogram here (default: stdout)")
    p.set_defaults(func=cmd_slope_hist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        _say(f"error: {exc}")
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        _say(f"error: {exc}")
        return EXIT_IO
    except (NumericError, ArithmeticError) as exc:
        _say(f"error: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
