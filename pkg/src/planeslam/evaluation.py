"""Trajectory error, map serialization and PLY export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .errors import DatasetFormatError
from .geometry import Plane, Pose

TIMESTAMP_TOL = 1e-9


@dataclass
class AteResult:
    rmse: float
    errors: np.ndarray  # per-frame translation error, meters
    timestamps: List[float]

    def as_dict(self) -> dict:
        return {
            "ate_rmse": self.rmse,
            "per_frame": [{"timestamp": t, "error": float(e)} for t, e in zip(self.timestamps, self.errors)],
        }


def match_timestamps(est: Sequence[float], gt: Sequence[float], tol: float = TIMESTAMP_TOL) -> List[int]:
    """Index into ``gt`` for each estimated timestamp; both sides must list the same stamps."""
    gt_arr = np.asarray(gt, dtype=float)
    est_arr = np.asarray(est, dtype=float)
    idx = np.searchsorted(gt_arr, est_arr).clip(0, max(len(gt_arr) - 1, 0))
    out, missing_gt = [], []
    for t, i in zip(est_arr, idx):
        best = min((j for j in (i - 1, i) if 0 <= j < len(gt_arr)), key=lambda j: abs(gt_arr[j] - t), default=None)
        if best is None or abs(gt_arr[best] - t) > tol:
            missing_gt.append(float(t))
        else:
            out.append(int(best))
    matched = set(out)
    missing_est = [float(gt_arr[j]) for j in range(len(gt_arr)) if j not in matched]
    if missing_gt or missing_est:
        parts = []
        if missing_gt:
            parts.append(f"ground truth lacks {len(missing_gt)} estimated timestamps (first {missing_gt[0]!r})")
        if missing_est:
            parts.append(f"estimate lacks {len(missing_est)} ground-truth timestamps (first {missing_est[0]!r})")
        raise DatasetFormatError("timestamp mismatch: " + "; ".join(parts))
    return out


def ate_rmse(est_poses: Sequence[Pose], gt_poses: Sequence[Pose]) -> float:
    """RMSE of camera-centre differences, no alignment."""
    return absolute_trajectory_error(est_poses, gt_poses).rmse


def absolute_trajectory_error(est_poses: Sequence[Pose], gt_poses: Sequence[Pose],
                              timestamps: Sequence[float] = ()) -> AteResult:
    if len(est_poses) != len(gt_poses):
        raise ValueError(f"{len(est_poses)} estimated vs {len(gt_poses)} ground-truth poses")
    if not est_poses:
        raise ValueError("empty trajectory")
    e = np.array([np.linalg.norm(a.center() - b.center()) for a, b in zip(est_poses, gt_poses)])
    ts = list(timestamps) or list(range(len(e)))
    return AteResult(float(np.sqrt(np.mean(e * e))), e, ts)


def evaluate_tum(est_stamps, est_poses, gt_stamps, gt_poses) -> AteResult:
    idx = match_timestamps(est_stamps, gt_stamps)
    return absolute_trajectory_error(est_poses, [gt_poses[i] for i in idx], est_stamps)


# --- map file -----------------------------------------------------------------


def map_to_dict(slam) -> dict:
    """Serializable snapshot of a finished run (map and per-frame trajectory)."""
    m = slam.map
    return {
        "points": [{"id": int(pid), "xyz": [float(v) for v in m.points[pid]]} for pid in sorted(m.points)],
        "planes": [
            {
                "id": int(lm.id),
                "normal": [float(v) for v in lm.plane.normal],
                "d": float(lm.plane.d),
                "valid": bool(lm.valid),
                "keyframe_observations": int(lm.keyframe_observations),
                "support_endpoints": [[float(v) for v in p] for p in lm.support_endpoints],
            }
            for lm in sorted(m.planes.values(), key=lambda p: p.id)
        ],
        "keyframes": [
            {"id": kf.id, "frame": kf.frame_index, "R": kf.pose.R.tolist(), "t": kf.pose.t.tolist()}
            for kf in m.keyframes
        ],
        "trajectory": [[float(v) for v in T.center()] for T in slam.trajectory()],
    }


def write_map(path, slam):
    with open(path, "w") as f:
        json.dump(map_to_dict(slam), f, indent=1, sort_keys=True)


def read_map(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DatasetFormatError(f"missing map file: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise DatasetFormatError(f"{path}: expected a JSON object")
    for key in ("points", "planes", "trajectory"):
        data.setdefault(key, [])
        if not isinstance(data[key], list):
            raise DatasetFormatError(f"{path}: '{key}' must be a list")
    return data


# --- PLY export ---------------------------------------------------------------


def plane_quad(plane: Plane, support) -> np.ndarray:
    """Corners of the bounding rectangle of ``support`` projected onto ``plane``.

    The rectangle is axis-aligned in an in-plane basis; corners are returned
    in order around the rectangle.
    """
    n = plane.normal
    a = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    origin = -plane.d * n
    rel = np.asarray(support, dtype=float).reshape(-1, 3) - origin
    s, t = rel @ e1, rel @ e2
    corners = [(s.min(), t.min()), (s.max(), t.min()), (s.max(), t.max()), (s.min(), t.max())]
    return np.array([origin + x * e1 + y * e2 for x, y in corners])


def plane_color(plane_id: int):
    rng = np.random.default_rng(int(plane_id))
    return tuple(int(c) for c in rng.integers(64, 256, 3))


def export_ply(map_data: dict, path) -> Dict[str, int]:
    """Write an ASCII PLY: map points, one quad per valid plane, trajectory edges."""
    verts, faces, edges = [], [], []
    for p in map_data["points"]:
        verts.append((*p["xyz"], 200, 200, 200))
    n_planes = 0
    for pl in map_data["planes"]:
        if not pl.get("valid") or len(pl.get("support_endpoints", [])) == 0:
            continue
        quad = plane_quad(Plane(pl["normal"], pl["d"]), pl["support_endpoints"])
        color = plane_color(pl["id"])
        base = len(verts)
        verts.extend((*q, *color) for q in quad)
        faces.append(tuple(range(base, base + 4)))
        n_planes += 1
    base = len(verts)
    for c in map_data["trajectory"]:
        verts.append((*c, 255, 0, 0))
    edges.extend((base + i, base + i + 1) for i in range(len(map_data["trajectory"]) - 1))

    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(verts)}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        f"element edge {len(edges)}",
        "property int vertex1",
        "property int vertex2",
        "end_header",
    ]
    lines += ["%.17g %.17g %.17g %d %d %d" % v for v in verts]
    lines += ["4 " + " ".join(map(str, f)) for f in faces]
    lines += ["%d %d" % e for e in edges]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return {"vertices": len(verts), "planes": n_planes, "edges": len(edges)}


def read_ply(path) -> dict:
    """Minimal reader for files written by :func:`export_ply`."""
    with open(path) as f:
        lines = f.read().splitlines()
    counts, i = {}, 0
    if not lines or lines[0] != "ply":
        raise DatasetFormatError(f"{path}: not a PLY file")
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[0] == "element":
            counts[parts[1]] = int(parts[2])
        i += 1
    i += 1
    nv, nf, ne = counts.get("vertex", 0), counts.get("face", 0), counts.get("edge", 0)
    verts = np.array([[float(x) for x in l.split()[:3]] for l in lines[i : i + nv]]).reshape(-1, 3)
    faces = [[int(x) for x in l.split()[1:]] for l in lines[i + nv : i + nv + nf]]
    edges = [[int(x) for x in l.split()] for l in lines[i + nv + nf : i + nv + nf + ne]]
    return {"vertices": verts, "faces": faces, "edges": edges}
