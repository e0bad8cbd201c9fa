"""Command line: ``simulate``, ``run``, ``eval`` and ``export-map``.

Exit codes: 0 success, 1 runtime failure (tracking lost, solver failure),
2 usage or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import __version__
from .config import load_config
from .dataset import read_dataset, read_tum, write_dataset, write_tum
from .errors import DatasetFormatError, PlaneSlamError, SimulationError
from .evaluation import evaluate_tum, export_ply, read_map, write_map
from .pipeline import MODES, StereoPlaneSlam
from .simulator import SCENE_NAMES, NoiseSpec, default_trajectory, generate, scene_and_waypoints
from .stereo import StereoIntrinsics

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("planeslam")


class UsageError(Exception):
    pass


def _prepare_out_dir(path, force):
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def cmd_simulate(args) -> int:
    if args.scene not in SCENE_NAMES:
        raise UsageError(f"unknown scene {args.scene!r}; choose from {', '.join(SCENE_NAMES)}")
    if args.frames < 1:
        raise UsageError("--frames must be positive")
    try:
        noise = NoiseSpec(
            point_sigma=args.noise_point_sigma,
            line_sigma=args.noise_line_sigma,
            point_dropout=args.noise_point_dropout,
            point_outlier_rate=args.noise_point_outliers,
            line_dropout=args.noise_line_dropout,
            seed=args.seed,
        )
        traj = default_trajectory(args.scene, args.frames, args.frame_rate, args.trajectory)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    _prepare_out_dir(args.out, args.force)
    scene, _ = scene_and_waypoints(args.scene)
    ds = generate(scene, traj, noise, StereoIntrinsics.euroc_like())
    write_dataset(args.out, ds.intrinsics, ds.frames, ds.gt_poses, ds.gt_planes)
    log.info("wrote %d frames of scene %s to %s", len(ds.frames), args.scene, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    ds = read_dataset(args.dataset)
    cfg = load_config(args.config) if args.config else None
    from .pipeline import PipelineConfig
    from dataclasses import replace

    cfg = cfg or PipelineConfig()
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    _prepare_out_dir(args.out, args.force)
    slam = StereoPlaneSlam(ds.intrinsics, cfg)
    t0 = time.perf_counter()
    status, error = "ok", None
    try:
        slam.run(ds.frames)
    except PlaneSlamError as exc:
        status, error = "failed", str(exc)
        log.error("%s", exc)
    elapsed = time.perf_counter() - t0

    traj = slam.trajectory()
    stamps = [r.timestamp for r in slam.records]
    write_tum(os.path.join(args.out, "est_traj.txt"), stamps, traj)
    write_map(os.path.join(args.out, "map.json"), slam)
    report = {
        "status": status,
        "error": error,
        "mode": cfg.mode,
        "frames": len(ds.frames),
        "frames_processed": len(slam.records),
        "keyframes": len(slam.map.keyframes),
        "point_landmarks": len(slam.map.points),
        "plane_landmarks": len(slam.map.planes),
        "valid_planes": len(slam.map.valid_planes()),
        "per_frame": [r.as_dict() for r in slam.records],
    }
    if ds.gt_poses and len(ds.gt_poses) >= len(traj) and traj:
        res = evaluate_tum(stamps, traj, ds.gt_timestamps[: len(traj)], ds.gt_poses[: len(traj)])
        report["ate_rmse"] = res.rmse
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    # wall-clock numbers differ run to run, so they live apart from report.json
    timing = {
        "total_seconds": elapsed,
        "mean_tracking_seconds": (sum(r.tracking_seconds for r in slam.records) / len(slam.records))
        if slam.records else None,
        "per_frame_tracking_seconds": [r.tracking_seconds for r in slam.records],
    }
    with open(os.path.join(args.out, "timing.json"), "w") as f:
        json.dump(timing, f, indent=1)
    summary = f"{status}: {len(slam.records)}/{len(ds.frames)} frames, {report['valid_planes']} valid planes"
    if "ate_rmse" in report:
        summary += f", ATE RMSE {report['ate_rmse']:.6g} m"
    print(summary)
    return EXIT_OK if status == "ok" else EXIT_RUNTIME


def cmd_eval(args) -> int:
    est_t, est_p = read_tum(args.est)
    gt_t, gt_p = read_tum(args.gt)
    if not est_t:
        raise DatasetFormatError(f"{args.est}: empty trajectory")
    res = evaluate_tum(est_t, est_p, gt_t, gt_p)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(res.as_dict(), f, indent=1)
    if args.verbose:
        for t, e in zip(res.timestamps, res.errors):
            print("%.17g %.6g" % (t, e))
    print("ATE RMSE %.9g m over %d frames" % (res.rmse, len(res.errors)))
    return EXIT_OK


def cmd_export_map(args) -> int:
    data = read_map(args.map)
    if os.path.exists(args.out) and not args.force:
        raise UsageError(f"{args.out} exists (use --force to overwrite)")
    counts = export_ply(data, args.out)
    print(f"wrote {args.out}: {counts['vertices']} vertices, {counts['planes']} planes, {counts['edges']} edges")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="planeslam", description="Stereo SLAM with point and plane landmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--verbose", "-v", action="store_true", help="debug logging")
        sp.add_argument("--force", action="store_true", help="overwrite existing output")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--scene", required=True, help=f"one of: {', '.join(SCENE_NAMES)}")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trajectory", default="default", help="default | static")
    s.add_argument("--frame-rate", type=float, default=20.0)
    s.add_argument("--noise-point-sigma", type=float, default=0.5, help="pixels")
    s.add_argument("--noise-line-sigma", type=float, default=1.0, help="pixels")
    s.add_argument("--noise-point-dropout", type=float, default=0.1)
    s.add_argument("--noise-point-outliers", type=float, default=0.0)
    s.add_argument("--noise-line-dropout", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run SLAM on a dataset directory")
    common(r)
    r.add_argument("dataset")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--config", help="key=value config file")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="ATE RMSE between two TUM trajectories")
    common(e)
    e.add_argument("est")
    e.add_argument("gt")
    e.add_argument("--out", help="write per-frame errors as JSON")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-map", help="convert map.json to PLY")
    common(x)
    x.add_argument("map")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_map)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, PlaneSlamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
