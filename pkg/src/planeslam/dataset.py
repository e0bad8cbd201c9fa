"""On-disk dataset format: plain text, line oriented.

A dataset directory holds four files:

``calib``
    ``key=value`` lines for ``fx fy cx cy baseline width height``.
``frames``
    For each frame a header ``frame <index> <timestamp> <n_points> <n_lines>``
    followed by ``n_points`` lines ``p <id> <u_l> <v> <u_r>`` and ``n_lines``
    lines ``l <hint> <u_l> <v> <u_r> <u_l> <v> <u_r>`` (start then end
    endpoint; ``hint`` is the generating plane id or ``-`` when unknown).
``gt_traj``
    TUM trajectory: ``timestamp tx ty tz qx qy qz qw`` with the camera centre
    and camera-to-world rotation.
``gt_planes``
    ``id nx ny nz d`` per ground-truth plane, world frame.

Lines starting with ``#`` are comments. Floats are written with 17
significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DatasetFormatError
from .frames import Frame
from .geometry import Plane, Pose
from .stereo import PointObservation, StereoIntrinsics, StereoLineObservation, StereoPixel

CALIB_KEYS = ("fx", "fy", "cx", "cy", "baseline", "width", "height")
DATASET_FILES = ("calib", "frames", "gt_traj", "gt_planes")


def fmt(x: float) -> str:
    return "%.17g" % x


@dataclass
class DiskDataset:
    intrinsics: StereoIntrinsics
    frames: List[Frame]
    gt_timestamps: List[float] = field(default_factory=list)
    gt_poses: List[Pose] = field(default_factory=list)
    gt_planes: Dict[int, Plane] = field(default_factory=dict)


# --- TUM trajectories -------------------------------------------------------


def pose_to_tum(timestamp: float, T_cw: Pose) -> str:
    T_wc = T_cw.inverse()
    q = Rotation.from_matrix(T_wc.R).as_quat()  # x, y, z, w
    return " ".join(fmt(v) for v in (timestamp, *T_wc.t, *q))


def write_tum(path, timestamps: Sequence[float], poses: Sequence[Pose]):
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for ts, T in zip(timestamps, poses):
            f.write(pose_to_tum(ts, T) + "\n")


def read_tum(path) -> Tuple[List[float], List[Pose]]:
    """Read a TUM trajectory; returns timestamps and world-to-camera poses."""
    stamps, poses = [], []
    for lineno, fields in _records(path):
        if len(fields) != 8:
            raise DatasetFormatError(f"{path}:{lineno}: expected 8 fields, got {len(fields)}")
        vals = _floats(fields, path, lineno)
        q = vals[4:]
        if not np.isclose(np.linalg.norm(q), 1.0, atol=1e-6):
            raise DatasetFormatError(f"{path}:{lineno}: quaternion is not unit length")
        R_wc = Rotation.from_quat(q).as_matrix()
        stamps.append(vals[0])
        poses.append(Pose(R_wc, vals[1:4]).inverse())
    return stamps, poses


# --- writing ------------------------------------------------------------------


def write_dataset(out_dir, intrinsics: StereoIntrinsics, frames: Sequence[Frame], gt_poses: Sequence[Pose],
                  gt_planes: Dict[int, Plane]):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "calib"), "w") as f:
        for k in CALIB_KEYS:
            v = getattr(intrinsics, k)
            f.write(f"{k}={v if isinstance(v, int) else fmt(v)}\n")
    with open(os.path.join(out_dir, "frames"), "w") as f:
        for i, fr in enumerate(frames):
            f.write(f"frame {i} {fmt(fr.timestamp)} {len(fr.point_observations)} {len(fr.line_observations)}\n")
            for o in fr.point_observations:
                f.write(f"p {o.landmark_id} " + " ".join(fmt(v) for v in o.pixel.as_array()) + "\n")
            for l in fr.line_observations:
                hint = "-" if l.id_hint is None else str(l.id_hint)
                vals = np.concatenate([l.start.as_array(), l.end.as_array()])
                f.write(f"l {hint} " + " ".join(fmt(v) for v in vals) + "\n")
    write_tum(os.path.join(out_dir, "gt_traj"), [fr.timestamp for fr in frames], gt_poses)
    with open(os.path.join(out_dir, "gt_planes"), "w") as f:
        f.write("# id nx ny nz d\n")
        for pid in sorted(gt_planes):
            pl = gt_planes[pid]
            f.write(f"{pid} " + " ".join(fmt(v) for v in (*pl.normal, pl.d)) + "\n")


# --- reading ------------------------------------------------------------------


def _records(path):
    try:
        with open(path) as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DatasetFormatError(f"missing file: {path}") from None
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if s and not s.startswith("#"):
            yield lineno, s.split()


def _floats(fields, path, lineno) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in fields])
    except ValueError:
        raise DatasetFormatError(f"{path}:{lineno}: non-numeric field") from None
    if not np.all(np.isfinite(vals)):
        raise DatasetFormatError(f"{path}:{lineno}: non-finite value")
    return vals


def read_calib(path) -> StereoIntrinsics:
    kv = {}
    for lineno, fields in _records(path):
        line = " ".join(fields)
        if "=" not in line:
            raise DatasetFormatError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    missing = [k for k in CALIB_KEYS if k not in kv]
    if missing:
        raise DatasetFormatError(f"{path}: missing keys {', '.join(missing)}")
    try:
        vals = {k: (int(kv[k]) if k in ("width", "height") else float(kv[k])) for k in CALIB_KEYS}
        return StereoIntrinsics(**vals)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


def _pixel(vals) -> StereoPixel:
    return StereoPixel(float(vals[0]), float(vals[1]), float(vals[2]))


def read_frames(path, K: StereoIntrinsics) -> List[Frame]:
    frames: List[Frame] = []
    it = iter(_records(path))
    for lineno, fields in it:
        if fields[0] != "frame" or len(fields) != 5:
            raise DatasetFormatError(f"{path}:{lineno}: expected 'frame <index> <timestamp> <n_points> <n_lines>'")
        try:
            ts = float(fields[2])
            n_p, n_l = int(fields[3]), int(fields[4])
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: malformed frame header") from None
        if frames and ts <= frames[-1].timestamp:
            raise DatasetFormatError(f"{path}:{lineno}: timestamps must increase strictly")
        points, lines = [], []
        for kind, count in (("p", n_p), ("l", n_l)):
            for _ in range(count):
                try:
                    ln, rec = next(it)
                except StopIteration:
                    raise DatasetFormatError(f"{path}: truncated frame {len(frames)}") from None
                want = 5 if kind == "p" else 8
                if rec[0] != kind or len(rec) != want:
                    raise DatasetFormatError(f"{path}:{ln}: expected '{kind}' record with {want} fields")
                if kind == "p":
                    try:
                        lid = int(rec[1])
                    except ValueError:
                        raise DatasetFormatError(f"{path}:{ln}: point id must be an integer") from None
                    points.append(PointObservation(_pixel(_floats(rec[2:], path, ln)), lid))
                else:
                    hint: Optional[int]
                    try:
                        hint = None if rec[1] == "-" else int(rec[1])
                    except ValueError:
                        raise DatasetFormatError(f"{path}:{ln}: line hint must be an integer or '-'") from None
                    v = _floats(rec[2:], path, ln)
                    lines.append(StereoLineObservation(_pixel(v[:3]), _pixel(v[3:]), hint))
        frames.append(Frame(ts, points, lines, K, index=len(frames)))
    return frames


def read_planes(path) -> Dict[int, Plane]:
    out = {}
    for lineno, fields in _records(path):
        if len(fields) != 5:
            raise DatasetFormatError(f"{path}:{lineno}: expected 'id nx ny nz d'")
        try:
            pid = int(fields[0])
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: plane id must be an integer") from None
        v = _floats(fields[1:], path, lineno)
        out[pid] = Plane(v[:3], v[3])
    return out


def read_dataset(path, require_ground_truth: bool = False) -> DiskDataset:
    if not os.path.isdir(path):
        raise DatasetFormatError(f"not a dataset directory: {path}")
    K = read_calib(os.path.join(path, "calib"))
    frames = read_frames(os.path.join(path, "frames"), K)
    if not frames:
        raise DatasetFormatError(f"{path}: no frames")
    ds = DiskDataset(K, frames)
    traj = os.path.join(path, "gt_traj")
    if os.path.exists(traj) or require_ground_truth:
        ds.gt_timestamps, ds.gt_poses = read_tum(traj)
    planes = os.path.join(path, "gt_planes")
    if os.path.exists(planes) or require_ground_truth:
        ds.gt_planes = read_planes(planes)
    return ds
