"""Command line entry points.

Subcommands: ``simulate`` (synthetic dataset generation), ``reconstruct``
(mosaic + path + metrics), ``match`` (plain vs schedule matching report),
``calibrate`` (material record from a calibration set) and ``evaluate``
(path CSV comparison). Exit codes: 0 success, 1 runtime failure, 2 usage
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dataio
from .calibration import calibrate_hooke, calibrate_youngs
from .core import Image, check_nonnegative_forces
from .exceptions import InsufficientInliersError, VeinmosaicError
from .features import asift_schedule, detect_asift, detect_sift, match_asift, match_features, match_points
from .pipeline import PathEstimate, ReconstructionSettings, path_metrics, reconstruct
from .pose import ransac_homography
from .simulator import (
    DEFAULT_INTRINSICS,
    DEFAULT_MATERIAL,
    ScanScript,
    generate_calibration_dataset,
    generate_dataset,
    loop_script,
    press_script,
    raster_script,
)

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veinmosaic",
        description="Force-aware mosaic reconstruction of contact-deformed scans",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic scan dataset")
    sim.add_argument("--frames", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument(
        "--path",
        default="raster",
        help="trajectory: 'raster', 'loop', 'press' or a CSV file of "
        "frame_id,x_mm,y_mm,yaw_deg[,fz_n,theta_x_deg,theta_y_deg]",
    )
    sim.add_argument("--out", required=True, type=Path)
    sim.add_argument("--force-min", type=float, default=2.0)
    sim.add_argument("--force-max", type=float, default=15.0)
    sim.add_argument("--max-tilt-deg", type=float, default=8.0)
    sim.add_argument("--yaw-deg", type=float, default=0.0)
    sim.add_argument("--noise", type=float, default=0.0, help="sensor noise fraction")
    sim.add_argument("--width", type=int, default=640)
    sim.add_argument("--height", type=int, default=480)
    sim.set_defaults(func=cmd_simulate)

    rec = sub.add_parser("reconstruct", help="reconstruct mosaic and path")
    rec.add_argument("--dataset", required=True, type=Path)
    rec.add_argument("--out", required=True, type=Path)
    rec.add_argument("--seed", type=int, default=0, help="RANSAC seed")
    rec.add_argument(
        "--auto-calibrate",
        action="store_true",
        help="re-estimate E from the first frames before reconstructing",
    )
    rec.add_argument("--calib-frames", type=int, default=5)
    rec.set_defaults(func=cmd_reconstruct)

    mat = sub.add_parser("match", help="compare plain and schedule matching")
    mat.add_argument("image_a", type=Path)
    mat.add_argument("image_b", type=Path)
    mat.add_argument("--stretch-ratio", type=float, default=1.13)
    mat.add_argument("--max-features", type=int, default=3000)
    mat.add_argument("--threshold-px", type=float, default=2.0)
    mat.add_argument("--seed", type=int, default=0)
    mat.add_argument("--viz", type=Path, help="write a side-by-side inlier image")
    mat.set_defaults(func=cmd_match)

    cal = sub.add_parser("calibrate", help="estimate material constants")
    cal.add_argument("--calib", required=True, type=Path)
    cal.add_argument("--out", required=True, type=Path)
    cal.add_argument("--simulate", action="store_true", help="generate the set first")
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--noise", type=float, default=0.0)
    cal.set_defaults(func=cmd_calibrate)

    ev = sub.add_parser("evaluate", help="compare two path CSV files")
    ev.add_argument("--estimated", required=True, type=Path)
    ev.add_argument("--truth", required=True, type=Path)
    ev.set_defaults(func=cmd_evaluate)
    return parser


def _script_from_args(args) -> ScanScript:
    force_range = (args.force_min, args.force_max)
    if args.path == "raster":
        return raster_script(
            args.frames,
            force_range=force_range,
            max_tilt_deg=args.max_tilt_deg,
            yaw_amplitude_deg=args.yaw_deg,
            seed=args.seed,
        )
    if args.path == "loop":
        return loop_script(
            args.frames,
            force_range=force_range,
            max_tilt_deg=args.max_tilt_deg,
            yaw_amplitude_deg=args.yaw_deg if args.yaw_deg else 4.0,
            seed=args.seed,
        )
    if args.path == "press":
        return press_script(args.frames, max_force=args.force_max, seed=args.seed)
    path = Path(args.path)
    if not path.exists():
        raise VeinmosaicError(f"unknown path kind or missing file: {args.path}")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    traj = rows[:, 1:4]
    if rows.shape[1] >= 7:
        prof = rows[:, 4:7]
    else:
        prof = np.zeros((len(rows), 3))
    return ScanScript(traj, prof, args.seed)


def cmd_simulate(args) -> int:
    script = _script_from_args(args)
    generate_dataset(
        script,
        DEFAULT_MATERIAL,
        DEFAULT_INTRINSICS,
        args.out,
        width=args.width,
        height=args.height,
        noise_frac=args.noise,
    )
    print(f"wrote {script.frame_count} frames to {args.out}")
    return 0


def _auto_calibrate(dataset: dataio.Dataset, k: int):
    """Re-fit E from the first k frames (frame 1 is the unloaded reference)."""
    from dataclasses import replace

    pairs = []
    unloaded = dataset.frames[0]
    for img, fs in zip(dataset.frames[1:k], dataset.forces[1:k]):
        pairs.append((unloaded, img, fs))
    if not pairs:
        return dataset.config.material
    e_fit = calibrate_youngs(pairs, dataset.config.material)
    logger.info("auto-calibrated E = %.1f Pa", e_fit)
    return replace(dataset.config.material, youngs_modulus=e_fit)


def cmd_reconstruct(args) -> int:
    dataset = dataio.load_dataset(args.dataset)
    for fs in dataset.forces:
        try:
            check_nonnegative_forces(fs)
        except ValueError as exc:
            logger.warning("%s (preloaded-sensor convention assumed)", exc)
            break
    material = dataset.config.material
    if args.auto_calibrate:
        material = _auto_calibrate(dataset, args.calib_frames)

    cfg = asift_schedule(
        dataset.config.stretch_ratio,
        peak_threshold=dataset.config.peak_threshold,
        edge_threshold=dataset.config.edge_threshold,
    )
    settings = ReconstructionSettings(ransac_seed=args.seed)
    mosaic, path = reconstruct(
        dataset.frames,
        dataset.forces,
        material,
        dataset.config.intrinsics,
        cfg,
        settings,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_image(out / "mosaic.png", mosaic.canvas)
    skipped = set(path.skipped)
    rows = [
        (fid, x, y, fid in skipped) for fid, x, y in path.entries
    ]
    dataio.write_path_csv(out / "path.csv", rows)

    # metrics are computed from the serialized values so that evaluate on
    # the written CSVs reproduces them bit-exactly
    est = PathEstimate.from_rows(
        [(fid, dataio.round_trip_number(x), dataio.round_trip_number(y)) for fid, x, y in path.entries]
    )
    metrics = {
        "frames": len(path.entries),
        "skipped": len(path.skipped),
        "rmse_mm": None,
        "error_ratio_percent": None,
        "path_length_mm": dataio.round_trip_number(est.arc_length()),
        "inlier_counts": list(path.inlier_counts),
    }
    if dataset.groundtruth is not None:
        truth = PathEstimate.from_rows(
            [
                (fid, dataio.round_trip_number(x), dataio.round_trip_number(y))
                for fid, x, y, _ in dataset.groundtruth
            ]
        )
        pm = path_metrics(est, truth)
        metrics["rmse_mm"] = pm.rmse_mm
        metrics["error_ratio_percent"] = pm.error_ratio_percent
    dataio.write_metrics_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _count_inliers(pts_a, pts_b, threshold_px, seed) -> int:
    if len(pts_a) < 4:
        return 0
    try:
        _, idx, _ = ransac_homography(pts_a, pts_b, threshold_px=threshold_px, seed=seed)
    except InsufficientInliersError:
        return 0
    return len(idx)


def _draw_matches(img_a: Image, img_b: Image, pts_a, pts_b, path: Path) -> None:
    import cv2

    ha, wa = img_a.shape
    hb, wb = img_b.shape
    canvas = np.zeros((max(ha, hb), wa + wb, 3), dtype=np.uint8)
    canvas[:ha, :wa] = img_a.data[..., None]
    canvas[:hb, wa:] = img_b.data[..., None]
    for (xa, ya), (xb, yb) in zip(pts_a, pts_b):
        p1 = (int(round(xa)), int(round(ya)))
        p2 = (int(round(xb)) + wa, int(round(yb)))
        cv2.line(canvas, p1, p2, (0, 255, 0), 1, cv2.LINE_AA)
    ok, buf = cv2.imencode(".png", canvas)
    if ok:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.tobytes())


def cmd_match(args) -> int:
    img_a = dataio.read_image(args.image_a)
    img_b = dataio.read_image(args.image_b)
    cfg = asift_schedule(args.stretch_ratio, max_features=args.max_features)

    feats_a = detect_sift(img_a, cfg)
    feats_b = detect_sift(img_b, cfg)
    sift_inliers = 0
    if feats_a and feats_b:
        m = match_features(feats_a, feats_b)
        pa, pb = match_points(feats_a, feats_b, m)
        sift_inliers = _count_inliers(pa, pb, args.threshold_px, args.seed)

    feats_b_multi = detect_asift(img_b, cfg)
    asift_inliers = 0
    pa2 = pb2 = np.empty((0, 2))
    if feats_a and feats_b_multi:
        m2 = match_asift(feats_a, feats_b_multi)
        pa2, pb2 = match_points(feats_a, feats_b_multi, m2)
        asift_inliers = _count_inliers(pa2, pb2, args.threshold_px, args.seed)

    ratio = asift_inliers / sift_inliers if sift_inliers else float("inf")
    report = {
        "sift_inliers": sift_inliers,
        "asift_inliers": asift_inliers,
        "ratio": None if sift_inliers == 0 else ratio,
    }
    print(json.dumps(report, sort_keys=True))
    if args.viz is not None:
        _draw_matches(img_a, img_b, pa2, pb2, args.viz)
    return 0


def cmd_calibrate(args) -> int:
    calib_dir = Path(args.calib)
    if args.simulate:
        generate_calibration_dataset(
            calib_dir,
            DEFAULT_MATERIAL,
            DEFAULT_INTRINSICS,
            seed=args.seed,
            noise_frac=args.noise,
        )
    cfg = dataio.read_config(calib_dir / "config.txt")
    kappa_samples = dataio.read_kappa_csv(calib_dir / "kappa.csv")
    kappa = calibrate_hooke(kappa_samples, cfg.material.sensor_sep_x)

    pair_forces = dataio.read_pairs_csv(calib_dir / "pairs.csv")
    pairs = []
    for fs in pair_forces:
        unloaded = dataio.read_image(calib_dir / "pairs" / f"unloaded_{fs.frame_id:03d}.png")
        loaded = dataio.read_image(calib_dir / "pairs" / f"loaded_{fs.frame_id:03d}.png")
        pairs.append((unloaded, loaded, fs))
    youngs = calibrate_youngs(pairs, cfg.material, seed=args.seed)

    lines = [
        "# veinmosaic material calibration",
        f"material.youngs_modulus_pa = {dataio.format_number(youngs)}",
        f"material.poisson_ratio = {dataio.format_number(cfg.material.poisson_ratio)}",
        f"material.hooke_constant_n_mm = {dataio.format_number(kappa)}",
        f"material.scanner_area_m2 = {dataio.format_number(cfg.material.scanner_area)}",
    ]
    dataio.atomic_write_text(Path(args.out), "\n".join(lines) + "\n")
    print(json.dumps({"youngs_modulus_pa": youngs, "hooke_constant_n_mm": kappa}))
    return 0


def cmd_evaluate(args) -> int:
    est_rows = dataio.read_path_csv(args.estimated)
    truth_rows = dataio.read_path_csv(args.truth)
    est = PathEstimate.from_rows(est_rows)
    truth = PathEstimate.from_rows(truth_rows)
    pm = path_metrics(est, truth)
    print(
        json.dumps(
            {
                "rmse_mm": pm.rmse_mm,
                "error_ratio_percent": pm.error_ratio_percent,
                "frames": len(est.entries),
            },
            sort_keys=True,
        )
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except VeinmosaicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
