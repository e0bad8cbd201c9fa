"""Deterministic synthetic stereo world: scenes, trajectories, noisy observations.

Scenes are authored in a room frame with z pointing up. :func:`generate`
re-expresses the whole dataset in the first camera's frame, so ground truth
starts at the identity pose like the SLAM pipeline does.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import SimulationError
from .frames import Frame
from .geometry import Plane, Pose, canonicalize, transform_plane
from .stereo import (
    MIN_DISPARITY,
    PointObservation,
    StereoIntrinsics,
    StereoLineObservation,
    StereoPixel,
    project_batch,
)

MIN_POINTS_PER_FRAME = 8
MIN_VISIBLE_DEPTH = 0.1
ON_PLANE_TOL = 1e-12


@dataclass
class PlanarPatch:
    plane_id: int
    plane: Plane
    center: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float
    segments: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def at(self, a, b) -> np.ndarray:
        return self.center + a * self.axis_u + b * self.axis_v


@dataclass
class SceneSpec:
    name: str
    patches: List[PlanarPatch]
    points: np.ndarray  # (N, 3)
    clutter: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def true_plane_count(self) -> int:
        return len({p.plane_id for p in self.patches})

    def planes(self) -> Dict[int, Plane]:
        return {p.plane_id: p.plane for p in self.patches}

    def segments(self) -> List[Tuple[np.ndarray, np.ndarray, Optional[int]]]:
        """All segments as ``(start, end, plane_id)``; clutter has plane id None."""
        out = [(s, e, p.plane_id) for p in self.patches for s, e in p.segments]
        return out + [(s, e, None) for s, e in self.clutter]

    def validate(self):
        for p in self.patches:
            for s, e in p.segments:
                for q in (s, e):
                    if abs(p.plane.signed_distance(q)) > ON_PLANE_TOL:
                        raise SimulationError(f"segment endpoint off plane {p.plane_id} in scene {self.name}")


@dataclass
class TrajectorySpec:
    """Waypoint poses (world-to-camera), interpolated uniformly in time."""

    waypoints: List[Pose]
    n_frames: int
    frame_rate: float = 20.0

    def poses(self) -> List[Pose]:
        wp = self.waypoints
        if self.n_frames < 1 or not wp:
            raise SimulationError("trajectory needs at least one waypoint and one frame")
        if len(wp) == 1:
            return [wp[0]] * self.n_frames
        centers = np.array([T.center() for T in wp])
        key_times = np.arange(len(wp), dtype=float)
        slerp = Slerp(key_times, Rotation.from_matrix(np.array([T.R.T for T in wp])))
        s = np.linspace(0.0, len(wp) - 1.0, self.n_frames)
        R_wc = slerp(s).as_matrix()
        out = []
        for k, sk in enumerate(s):
            i = min(int(np.floor(sk)), len(wp) - 2)
            f = sk - i
            c = (1.0 - f) * centers[i] + f * centers[i + 1]
            R_cw = R_wc[k].T
            out.append(Pose(R_cw, -R_cw @ c))
        return out

    def timestamps(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.frame_rate


@dataclass(frozen=True)
class NoiseSpec:
    point_sigma: float = 0.5
    line_sigma: float = 1.0
    point_dropout: float = 0.1
    point_outlier_rate: float = 0.0
    line_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.point_sigma < 0 or self.line_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        for r in (self.point_dropout, self.point_outlier_rate, self.line_dropout):
            if not 0.0 <= r <= 1.0:
                raise ValueError("rates must lie in [0, 1]")

    @classmethod
    def noiseless(cls, seed=0) -> "NoiseSpec":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass
class Dataset:
    intrinsics: StereoIntrinsics
    frames: List[Frame]
    gt_poses: List[Pose]
    gt_planes: Dict[int, Plane]
    gt_points: Dict[int, np.ndarray]
    # segment index -> plane id (None for clutter), world frame endpoints
    gt_segments: List[Tuple[np.ndarray, np.ndarray, Optional[int]]] = field(default_factory=list)

    @property
    def timestamps(self) -> List[float]:
        return [f.timestamp for f in self.frames]


# --- scene authoring helpers -------------------------------------------------


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose for a camera at ``position`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    c = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - c
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R_cw = np.stack([x, y, z])
    return Pose(R_cw, -R_cw @ c)


def _patch(plane_id, center, axis_u, axis_v, half_u, half_v) -> PlanarPatch:
    u = np.asarray(axis_u, dtype=float)
    v = np.asarray(axis_v, dtype=float)
    c = np.asarray(center, dtype=float)
    n = np.cross(u, v)
    return PlanarPatch(plane_id, Plane.through_point(n, c), c, u, v, half_u, half_v)


def _add_cross(patch: PlanarPatch, a, b, half_len, tilt=0.0):
    """Two perpendicular segments crossing at their centres, at patch coords (a, b)."""
    c, s = np.cos(tilt), np.sin(tilt)
    for du, dv in ((c, s), (-s, c)):
        start = patch.at(a - half_len * du, b - half_len * dv)
        end = patch.at(a + half_len * du, b + half_len * dv)
        patch.segments.append((_snap(patch, start), _snap(patch, end)))


def _snap(patch: PlanarPatch, p):
    # remove rounding drift off the plane
    return p - patch.plane.signed_distance(p) * patch.plane.normal


def _texture(rng, patch: PlanarPatch, count, margin=0.02):
    a = rng.uniform(-patch.half_u + margin, patch.half_u - margin, count)
    b = rng.uniform(-patch.half_v + margin, patch.half_v - margin, count)
    return np.array([_snap(patch, patch.at(x, y)) for x, y in zip(a, b)])


def _room(rng) -> Tuple[SceneSpec, List[Pose]]:
    L, W, H = 3.2, 2.0, 2.2
    ex, ey, ez = np.eye(3)
    patches = [
        _patch(0, (L / 2, W / 2, 0.0), ex, ey, L / 2, W / 2),            # floor
        _patch(1, (L / 2, W, H / 2), ex, ez, L / 2, H / 2),              # left wall
        _patch(2, (L / 2, 0.0, H / 2), -ex, ez, L / 2, H / 2),           # right wall
        _patch(3, (L, W / 2, H / 2), ey, ez, W / 2, H / 2),              # end wall
        _patch(4, (0.0, W / 2, H / 2), -ey, ez, W / 2, H / 2),           # back wall
    ]
    floor, left, right, end, back = patches
    for a in np.arange(-1.35, 1.4, 0.45):
        for b in (-0.55, -0.05):
            _add_cross(left, a, b + 0.1 * np.sin(3 * a), 0.32, tilt=0.3 * np.cos(2 * a) + b)
        _add_cross(right, a, 0.1, 0.3)
    # floor crosses stop short of the far corner, where a floor and a wall
    # segment would nearly intersect and pass as a coplanar pair
    for a in np.arange(-1.35, 1.0, 0.45):
        for b in (0.15, 0.6):
            _add_cross(floor, a, b + 0.1 * np.cos(a), 0.32, tilt=0.5 + 0.3 * b)
    for a in (-0.6, 0.0, 0.6):
        for b in (-0.55, -0.05):
            _add_cross(end, a, b, 0.25, tilt=0.25 + b)
        _add_cross(back, a, 0.0, 0.3)
    counts = (8, 8, 10, 40, 10)
    pts = np.vstack([_texture(rng, p, n) for p, n in zip(patches, counts)])
    scene = SceneSpec("room", patches, pts)
    waypoints = [
        look_at((0.5, 1.0, 0.9), (2.2, 1.9, 0.1)),
        look_at((0.9, 0.9, 0.95), (2.6, 1.8, 0.15)),
        look_at((1.3, 1.05, 0.9), (3.0, 1.9, 0.1)),
        look_at((1.7, 0.95, 0.95), (3.2, 1.7, 0.15)),
    ]
    return scene, waypoints


def _corridor(rng) -> Tuple[SceneSpec, List[Pose]]:
    L, W, H = 12.0, 2.0, 2.4
    ex, ey, ez = np.eye(3)
    patches = [
        _patch(0, (L / 2, W / 2, 0.0), ex, ey, L / 2, W / 2),
        _patch(1, (L / 2, W, H / 2), ex, ez, L / 2, H / 2),
        _patch(2, (L / 2, 0.0, H / 2), -ex, ez, L / 2, H / 2),
    ]
    floor, left, right = patches
    for a in np.arange(-5.5, 5.6, 0.8):
        _add_cross(left, a, 0.2 * np.sin(a), 0.4, tilt=0.2)
        _add_cross(right, a + 0.4, -0.1, 0.4, tilt=-0.2)
        _add_cross(floor, a, 0.0, 0.3, tilt=0.6)
    pts = np.vstack([_texture(rng, p, n) for p, n in zip(patches, (90, 110, 110))])
    scene = SceneSpec("corridor", patches, pts)
    waypoints = [
        look_at((1.0, 1.0, 1.2), (3.0, 1.6, 0.6)),
        look_at((3.0, 0.9, 1.2), (5.0, 1.5, 0.6)),
        look_at((5.0, 1.1, 1.2), (7.0, 0.4, 0.6)),
        look_at((7.0, 1.0, 1.2), (9.0, 1.6, 0.6)),
    ]
    return scene, waypoints


def _hall(rng) -> Tuple[SceneSpec, List[Pose]]:
    ex, ey, ez = np.eye(3)
    patches = [_patch(0, (3.0, 0.0, 0.0), ex, ey, 3.0, 3.0)]
    pid = 1
    for bx, by, s in ((2.6, 0.8, 0.5), (3.4, -0.9, 0.45)):
        patches.append(_patch(pid, (bx - s, by, s), -ey, ez, s, s))        # face toward camera (-x)
        patches.append(_patch(pid + 1, (bx, by - s, s), ex, ez, s, s))     # side face (-y)
        patches.append(_patch(pid + 2, (bx, by, 2 * s), ex, ey, s, s))     # top
        pid += 3
    floor = patches[0]
    for a in np.arange(-2.4, 2.5, 0.8):
        _add_cross(floor, a, 0.5 * np.sin(a), 0.35, tilt=0.4)
    for p in patches[1:]:
        _add_cross(p, 0.0, 0.0, 0.8 * p.half_u, tilt=0.2)
    pts = np.vstack([_texture(rng, floor, 160)] + [_texture(rng, p, 20) for p in patches[1:]])
    scene = SceneSpec("hall", patches, pts)
    waypoints = [
        look_at((0.6, 0.3, 1.3), (2.6, -0.2, 0.3)),
        look_at((0.9, 0.9, 1.3), (2.8, -0.3, 0.3)),
        look_at((0.8, -0.5, 1.3), (2.8, 0.2, 0.3)),
    ]
    return scene, waypoints


def _minimal(rng) -> Tuple[SceneSpec, List[Pose]]:
    ey, ez = np.eye(3)[1], np.eye(3)[2]
    wall = _patch(0, (2.0, 0.0, 1.2), ey, ez, 1.5, 1.2)
    _add_cross(wall, 0.0, 0.0, 0.5, tilt=0.3)
    pts = _texture(rng, wall, 60)
    scene = SceneSpec("minimal", [wall], pts)
    waypoints = [
        look_at((0.6, -0.6, 1.2), (2.0, 0.1, 1.0)),
        look_at((0.7, 0.6, 1.25), (2.0, -0.1, 1.0)),
    ]
    return scene, waypoints


_SCENES = {"minimal": _minimal, "room": _room, "corridor": _corridor, "hall": _hall}
SCENE_NAMES = tuple(_SCENES)


def scene_and_waypoints(name: str):
    if name not in _SCENES:
        raise KeyError(f"unknown scene {name!r}; choose from {', '.join(SCENE_NAMES)}")
    scene, wp = _SCENES[name](np.random.default_rng(1234))
    scene.validate()
    return scene, wp


def standard_scenes() -> Dict[str, SceneSpec]:
    """Named scenes: ``minimal`` (1 plane), ``room`` (5), ``corridor`` (3), ``hall`` (7)."""
    return {name: scene_and_waypoints(name)[0] for name in SCENE_NAMES}


def default_trajectory(name: str, n_frames: int, frame_rate: float = 20.0, kind: str = "default") -> TrajectorySpec:
    _, wp = scene_and_waypoints(name)
    if kind == "static":
        wp = wp[:1]
    elif kind != "default":
        raise KeyError(f"unknown trajectory {kind!r}")
    return TrajectorySpec(wp, n_frames, frame_rate)


# --- observation generation -------------------------------------------------


def _visible(K: StereoIntrinsics, pc, px):
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (z > MIN_VISIBLE_DEPTH) & (z <= K.max_depth)
        ok &= (px[:, 0] >= 0) & (px[:, 0] <= K.width - 1) & (px[:, 2] >= 0) & (px[:, 2] <= K.width - 1)
        ok &= (px[:, 1] >= 0) & (px[:, 1] <= K.height - 1)
        ok &= (px[:, 0] - px[:, 2]) >= MIN_DISPARITY
    return ok


def _clip(K, px):
    px[:, 0] = np.clip(px[:, 0], 0.0, K.width - 1.0)
    px[:, 2] = np.clip(px[:, 2], 0.0, K.width - 1.0)
    px[:, 1] = np.clip(px[:, 1], 0.0, K.height - 1.0)
    return px


def _to_cam(T: Pose, P):
    return P @ T.R.T + T.t


def generate(scene: SceneSpec, traj: TrajectorySpec, noise: NoiseSpec, K: StereoIntrinsics) -> Dataset:
    """Render noisy stereo observations of ``scene`` along ``traj``.

    Fully determined by ``noise.seed``. Raises SimulationError when a frame
    retains fewer than 8 point observations.
    """
    scene.validate()
    poses_room = traj.poses()
    T0_inv = poses_room[0].inverse()
    gt_poses = [T @ T0_inv for T in poses_room]
    T0 = poses_room[0]
    world_pts = _to_cam(T0, scene.points) if len(scene.points) else np.zeros((0, 3))
    gt_planes = {pid: transform_plane(T0, pl) for pid, pl in scene.planes().items()}
    segs = [(_to_cam(T0, s[None])[0], _to_cam(T0, e[None])[0], pid) for s, e, pid in scene.segments()]
    seg_s = np.array([s for s, _, _ in segs]).reshape(-1, 3)
    seg_e = np.array([e for _, e, _ in segs]).reshape(-1, 3)
    seg_pid = [pid for _, _, pid in segs]

    rng = np.random.default_rng(noise.seed)
    times = traj.timestamps()
    frames = []
    for k, T in enumerate(gt_poses):
        pc = _to_cam(T, world_pts)
        with np.errstate(divide="ignore", invalid="ignore"):
            px = project_batch(K, pc)
        vis = np.flatnonzero(_visible(K, pc, px))
        keep = vis[rng.random(len(vis)) >= noise.point_dropout]
        obs_px = px[keep] + rng.normal(0.0, 1.0, (len(keep), 3)) * noise.point_sigma
        outlier = rng.random(len(keep)) < noise.point_outlier_rate
        if np.any(outlier):
            m = int(outlier.sum())
            u = rng.uniform(0, K.width, m)
            obs_px[outlier] = np.stack([u, rng.uniform(0, K.height, m), u - rng.uniform(1.0, 50.0, m)], axis=1)
        obs_px = _clip(K, obs_px)
        if len(keep) < MIN_POINTS_PER_FRAME:
            raise SimulationError(
                f"frame {k} observes {len(keep)} points (< {MIN_POINTS_PER_FRAME}); "
                f"scene {scene.name!r} / trajectory not viable"
            )
        points = [PointObservation(StereoPixel(*map(float, q)), int(i)) for i, q in zip(keep, obs_px)]

        lines = []
        if len(seg_s):
            ps, pe = _to_cam(T, seg_s), _to_cam(T, seg_e)
            with np.errstate(divide="ignore", invalid="ignore"):
                qs, qe = project_batch(K, ps), project_batch(K, pe)
            lvis = np.flatnonzero(_visible(K, ps, qs) & _visible(K, pe, qe))
            lkeep = lvis[rng.random(len(lvis)) >= noise.line_dropout]
            ns = qs[lkeep] + rng.normal(0.0, 1.0, (len(lkeep), 3)) * noise.line_sigma
            ne = qe[lkeep] + rng.normal(0.0, 1.0, (len(lkeep), 3)) * noise.line_sigma
            ns, ne = _clip(K, ns), _clip(K, ne)
            for i, a, b in zip(lkeep, ns, ne):
                lines.append(
                    StereoLineObservation(StereoPixel(*map(float, a)), StereoPixel(*map(float, b)), seg_pid[i])
                )
        frames.append(Frame(float(times[k]), points, lines, K, index=k))
    return Dataset(
        K,
        frames,
        gt_poses,
        {pid: canonicalize(pl) for pid, pl in gt_planes.items()},
        {i: p for i, p in enumerate(world_pts)},
        segs,
    )


def simulate(scene_name: str, n_frames: int, noise: NoiseSpec = NoiseSpec(), K: Optional[StereoIntrinsics] = None,
             trajectory: str = "default", frame_rate: float = 20.0) -> Dataset:
    """Convenience wrapper: standard scene + its default trajectory."""
    scene, _ = scene_and_waypoints(scene_name)
    traj = default_trajectory(scene_name, n_frames, frame_rate, trajectory)
    return generate(scene, traj, noise, K or StereoIntrinsics.euroc_like())
