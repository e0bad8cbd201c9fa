"""Frame processing, pose tracking and mapping over a stereo sequence."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import numpy as np

from .association import NEW, AssociationConfig, PlaneLandmark, associate, is_match, observe
from .errors import (
    DegenerateSegmentError,
    DegenerateTrackingError,
    SolverError,
    TrackingLostError,
    UnreliableDepthError,
)
from .extraction import CandidatePlane, ExtractionConfig, extract_planes
from .frames import Frame
from .geometry import Plane, Pose, rotation_angle, transform_plane
from .optimizer import Covariances, FactorGraph, SolverConfig, solve, solve_pose_only
from .stereo import StereoIntrinsics, StereoPixel, triangulate, triangulate_segment

log = logging.getLogger(__name__)

MODES = ("points+planes", "points-only")
CHI2_3DOF_95 = 7.815


@dataclass(frozen=True)
class KeyframePolicy:
    min_translation: float = 0.2
    min_rotation: float = np.deg2rad(10.0)
    max_frame_gap: int = 10


@dataclass
class PipelineConfig:
    mode: str = "points+planes"
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    covariances: Covariances = field(default_factory=Covariances)
    keyframes: KeyframePolicy = field(default_factory=KeyframePolicy)
    ba_window: int = 10
    ba_max_fixed: int = 20
    min_tracked: int = 8
    min_disparity: float = 0.1
    max_depth_baselines: float = 40.0
    outlier_chi2: float = CHI2_3DOF_95
    # a new candidate passing the gates of a landmark created from the same
    # keyframe is treated as a repeat view of it rather than a second landmark
    dedup_new_planes: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def use_planes(self) -> bool:
        return self.mode == "points+planes"


@dataclass
class Keyframe:
    id: int
    frame_index: int
    pose: Pose
    point_obs: Dict[int, StereoPixel] = field(default_factory=dict)
    plane_obs: Dict[int, Plane] = field(default_factory=dict)  # camera-frame measurements


@dataclass
class Map:
    keyframes: List[Keyframe] = field(default_factory=list)
    points: Dict[int, np.ndarray] = field(default_factory=dict)
    planes: Dict[int, PlaneLandmark] = field(default_factory=dict)
    next_plane_id: int = 0

    def keyframe(self, kf_id) -> Keyframe:
        return self.keyframes[kf_id]

    def valid_planes(self) -> List[PlaneLandmark]:
        return [p for p in self.planes.values() if p.valid]


@dataclass
class TrackingRecord:
    frame_index: int
    timestamp: float
    pose: Pose
    is_keyframe: bool
    matched_points: int
    matched_planes: int
    tracking_planes: int
    candidates: int
    new_planes: int
    rejected_planes: int
    valid_planes: int
    # (candidate source hint, landmark id) pairs for association evaluation
    plane_matches: list = field(default_factory=list, repr=False)
    tracking_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "timestamp": self.timestamp,
            "keyframe": self.is_keyframe,
            "matched_points": self.matched_points,
            "matched_planes": self.matched_planes,
            "tracking_planes": self.tracking_planes,
            "candidates": self.candidates,
            "new_planes": self.new_planes,
            "rejected_planes": self.rejected_planes,
            "valid_planes": self.valid_planes,
        }


class StereoPlaneSlam:
    """Sequential SLAM over stereo frames with point and plane landmarks.

    ``graph_hooks`` are called with every factor graph handed to the solver
    together with the current map; tests use them to inspect what the
    optimizer sees.
    """

    def __init__(self, K: StereoIntrinsics, config: Optional[PipelineConfig] = None):
        self.K = K
        self.cfg = config or PipelineConfig()
        self.map = Map()
        self.records: List[TrackingRecord] = []
        self.graph_hooks: List[Callable[[FactorGraph, Map, str], None]] = []
        self._frame_kf: List[int] = []  # reference keyframe per frame
        self._rel_to_kf: List[Pose] = []  # T_frame * T_kf^-1 at tracking time
        self._last_poses: List[Pose] = []
        self._plane_hints: Dict[int, Optional[int]] = {}

    # -- front end ---------------------------------------------------------

    def _triangulate_kwargs(self):
        return {"min_disparity": self.cfg.min_disparity, "max_depth": self.cfg.max_depth_baselines * self.K.baseline}

    def _segments(self, frame: Frame):
        segs, hints = [], []
        for obs in frame.line_observations:
            try:
                segs.append(triangulate_segment(self.K, obs, **self._triangulate_kwargs()))
            except (UnreliableDepthError, DegenerateSegmentError):
                continue
            hints.append(obs.id_hint)
        return segs, hints

    def _predict(self) -> Pose:
        if len(self._last_poses) < 2:
            return self._last_poses[-1]
        prev, last = self._last_poses[-2], self._last_poses[-1]
        return (last @ prev.inverse()) @ last

    def _need_keyframe(self, pose: Pose, frame_index: int) -> bool:
        kf = self.map.keyframes[-1]
        pol = self.cfg.keyframes
        if np.linalg.norm(pose.center() - kf.pose.center()) > pol.min_translation:
            return True
        if rotation_angle(pose.R @ kf.pose.R.T) > pol.min_rotation:
            return True
        return frame_index - kf.frame_index >= pol.max_frame_gap

    def _notify(self, graph, stage):
        for hook in self.graph_hooks:
            hook(graph, self.map, stage)

    # -- tracking ----------------------------------------------------------

    def _track(self, frame: Frame, pred: Pose, point_obs, plane_pairs):
        """Pose-only optimization with two rounds of point outlier rejection."""
        inliers = np.ones(len(point_obs), dtype=bool)
        pose = pred
        for _ in range(2):
            g = FactorGraph(self.K, self.cfg.covariances)
            g.add_pose(pose)
            idx = np.flatnonzero(inliers)
            for i in idx:
                o = point_obs[i]
                j = g.add_point(self.map.points[o.landmark_id])
                g.add_point_factor(0, j, o.pixel)
            for cand, lm in plane_pairs:
                j = g.add_plane(lm.plane)
                g.add_plane_factor(0, j, cand.plane)
            self._notify(g, "tracking")
            pose, report = solve_pose_only(g, self.cfg.solver)
            bad = report.point_chi2 > self.cfg.outlier_chi2
            if not np.any(bad):
                break
            inliers[idx[bad]] = False
        return pose, inliers

    # -- main entry --------------------------------------------------------

    def process_frame(self, frame: Frame) -> TrackingRecord:
        k = len(self.records)
        t0 = time.perf_counter()
        if self.cfg.use_planes:
            segs, hints = self._segments(frame)
            cands = extract_planes(segs, self.cfg.extraction)
        else:
            hints, cands = [], []
        cand_hints = [self._pair_hint(hints, c) for c in cands]

        if not self.map.keyframes:
            pose = Pose.identity()
            matches = [(i, None) for i in range(len(cands))]
            inlier_obs = list(frame.point_observations)
            tracking_planes = n_matched_points = 0
            tracking_seconds = time.perf_counter() - t0
            is_kf = True
        else:
            pred = self._predict()
            point_obs = [o for o in frame.point_observations if o.landmark_id in self.map.points]
            n_matched_points = len(point_obs)
            landmarks = list(self.map.planes.values())
            matches = associate(cands, pred, landmarks, self.cfg.association) if cands else []
            valid_pairs = [
                (cands[ci], self.map.planes[lid]) for ci, lid in matches if is_match(lid) and self.map.planes[lid].valid
            ]
            if len(point_obs) + len(valid_pairs) < self.cfg.min_tracked:
                raise TrackingLostError(k, f"only {len(point_obs)} points and {len(valid_pairs)} planes matched")
            try:
                pose, inliers = self._track(frame, pred, point_obs, valid_pairs)
            except DegenerateTrackingError as exc:
                raise TrackingLostError(k, str(exc)) from exc
            if int(inliers.sum()) + len(valid_pairs) < self.cfg.min_tracked:
                raise TrackingLostError(k, f"only {int(inliers.sum())} inlier points after outlier rejection")
            tracking_planes = len(valid_pairs)
            tracking_seconds = time.perf_counter() - t0
            outlier_ids = {o.landmark_id for o, ok in zip(point_obs, inliers) if not ok}
            inlier_obs = [o for o in frame.point_observations if o.landmark_id not in outlier_ids]
            is_kf = self._need_keyframe(pose, k)

        matched = [(ci, lid) for ci, lid in matches if is_match(lid)]
        unmatched = [ci for ci, lid in matches if lid is NEW]
        new_planes = 0
        if is_kf:
            new_planes = self._insert_keyframe(k, pose, inlier_obs, cands, cand_hints, matched, unmatched)
            if len(self.map.keyframes) >= 2:
                self.local_bundle_adjustment()
            pose = self.map.keyframes[-1].pose

        self._last_poses = (self._last_poses + [pose])[-2:]
        kf = self.map.keyframes[-1]
        self._frame_kf.append(kf.id)
        self._rel_to_kf.append(pose @ kf.pose.inverse())
        rec = TrackingRecord(
            frame_index=k,
            timestamp=frame.timestamp,
            pose=pose,
            is_keyframe=is_kf,
            matched_points=n_matched_points,
            matched_planes=len(matched),
            tracking_planes=tracking_planes,
            candidates=len(cands),
            new_planes=new_planes,
            rejected_planes=len(cands) - len(matched) - new_planes,
            valid_planes=len(self.map.valid_planes()),
            plane_matches=[(cand_hints[ci], lid) for ci, lid in matched],
            tracking_seconds=tracking_seconds,
        )
        self.records.append(rec)
        return rec

    @staticmethod
    def _pair_hint(hints, cand: CandidatePlane):
        i, j = cand.source_segment_indices
        return hints[i] if hints[i] is not None and hints[i] == hints[j] else None

    # -- mapping -----------------------------------------------------------

    def _insert_keyframe(self, k, pose, point_obs, cands, cand_hints, matched, unmatched) -> int:
        m = self.map
        kf = Keyframe(len(m.keyframes), k, pose)
        T_wc = pose.inverse()
        for o in point_obs:
            if o.landmark_id not in m.points:
                try:
                    p_c = triangulate(self.K, o.pixel, **self._triangulate_kwargs())
                except UnreliableDepthError:
                    continue
                m.points[o.landmark_id] = T_wc.R @ p_c + T_wc.t
            kf.point_obs[o.landmark_id] = o.pixel
        for ci, lid in matched:
            cand = cands[ci]
            lm = observe(m.planes[lid], True, self.cfg.association)
            m.planes[lid] = lm.with_support(cand.support_endpoints @ T_wc.R.T + T_wc.t)
            kf.plane_obs[lid] = cand.plane
        created = []
        for ci in unmatched:
            cand = cands[ci]
            if self.cfg.dedup_new_planes and created:
                if is_match(associate([cand], pose, created, self.cfg.association)[0][1]):
                    continue
            lid = m.next_plane_id
            m.next_plane_id += 1
            lm = PlaneLandmark(lid, transform_plane(T_wc, cand.plane), source_hint=cand_hints[ci])
            lm = observe(lm, True, self.cfg.association)
            m.planes[lid] = lm.with_support(cand.support_endpoints @ T_wc.R.T + T_wc.t)
            kf.plane_obs[lid] = cand.plane
            created.append(m.planes[lid])
        m.keyframes.append(kf)
        return len(created)

    def local_bundle_adjustment(self, window: Optional[int] = None) -> bool:
        """Refine the newest ``window`` keyframes and the landmarks they observe.

        The oldest keyframe of the window is held fixed, as is every older
        keyframe that shares a landmark with the window. Returns False (map
        unchanged) if the solver fails.
        """
        m = self.map
        window = self.cfg.ba_window if window is None else window
        local = m.keyframes[-window:]
        local_ids = {kf.id for kf in local}
        pt_ids = sorted({pid for kf in local for pid in kf.point_obs})
        pl_ids = sorted({lid for kf in local for lid in kf.plane_obs if m.planes[lid].valid})
        pt_set, pl_set = set(pt_ids), set(pl_ids)
        older = m.keyframes[: len(m.keyframes) - len(local)]
        outside = [
            kf for kf in older if pt_set.intersection(kf.point_obs) or pl_set.intersection(kf.plane_obs)
        ][len(older) and -self.cfg.ba_max_fixed:]

        g = FactorGraph(self.K, self.cfg.covariances)
        pose_idx = {}
        for kf in outside + local:
            fixed = kf.id not in local_ids or kf is local[0]
            pose_idx[kf.id] = g.add_pose(kf.pose, fixed=fixed)
        pt_idx = {pid: g.add_point(m.points[pid]) for pid in pt_ids}
        pl_idx = {lid: g.add_plane(m.planes[lid].plane) for lid in pl_ids}
        pt_factor_src = []
        for kf in outside + local:
            for pid, px in kf.point_obs.items():
                if pid in pt_idx:
                    g.add_point_factor(pose_idx[kf.id], pt_idx[pid], px)
                    pt_factor_src.append((kf, pid))
            for lid, meas in kf.plane_obs.items():
                if lid in pl_idx:
                    g.add_plane_factor(pose_idx[kf.id], pl_idx[lid], meas)
        self._notify(g, "local_ba")
        try:
            out, report = solve(g, self.cfg.solver)
        except SolverError as exc:
            log.warning("local BA failed, map unchanged: %s", exc)
            return False
        for kf in local:
            kf.pose = out.poses[pose_idx[kf.id]]
        for pid, i in pt_idx.items():
            m.points[pid] = out.points[i]
        for lid, i in pl_idx.items():
            m.planes[lid] = replace(m.planes[lid], plane=out.planes[i])
        for (kf, pid), chi2 in zip(pt_factor_src, report.point_chi2):
            if chi2 > self.cfg.outlier_chi2 and kf.id in local_ids and kf is not local[0]:
                del kf.point_obs[pid]
        return True

    # -- results -----------------------------------------------------------

    def trajectory(self) -> List[Pose]:
        """Per-frame world-to-camera poses, each re-anchored on its refined reference keyframe."""
        return [rel @ self.map.keyframes[kf].pose for kf, rel in zip(self._frame_kf, self._rel_to_kf)]

    def run(self, frames) -> List[TrackingRecord]:
        for f in frames:
            self.process_frame(f)
        return self.records
