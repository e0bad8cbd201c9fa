"""Plane data association by endpoint distance, and landmark validation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .extraction import CandidatePlane
from .geometry import Plane, Pose, angle_between_directions

NEW = None
# passed both gates for some landmark, but every such landmark was claimed by a
# closer candidate this frame: a repeated view of an already matched plane
REJECTED = "rejected"
MAX_SUPPORT_POINTS = 64


@dataclass(frozen=True)
class AssociationConfig:
    max_endpoint_distance: float = 0.06
    max_normal_angle: float = np.deg2rad(12.0)
    validity_min: int = 3


@dataclass(frozen=True, eq=False)
class PlaneLandmark:
    id: int
    plane: Plane  # world frame, canonical
    keyframe_observations: int = 0
    valid: bool = False
    support_endpoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    # ground-truth plane id for evaluation; never read by association
    source_hint: Optional[int] = None

    def with_support(self, pts) -> "PlaneLandmark":
        stacked = np.vstack([self.support_endpoints, np.asarray(pts, dtype=float).reshape(-1, 3)])
        return replace(self, support_endpoints=stacked[-MAX_SUPPORT_POINTS:])


def endpoint_distance(candidate: CandidatePlane, T_cw: Pose, landmark: PlaneLandmark) -> float:
    """Mean absolute distance of the candidate's endpoints to the landmark plane."""
    p_w = (candidate.support_endpoints - T_cw.t) @ T_cw.R  # R^T (p - t), row-wise
    return float(np.mean(np.abs(p_w @ landmark.plane.normal + landmark.plane.d)))


def associate(
    candidates: Sequence[CandidatePlane],
    T_cw: Pose,
    landmarks: Sequence[PlaneLandmark],
    cfg: AssociationConfig = AssociationConfig(),
) -> List[Tuple[int, Union[int, None, str]]]:
    """Match each candidate to at most one landmark.

    Returns ``(candidate_index, label)`` in candidate order, where the label is
    a landmark id, ``NEW`` when no landmark passes both gates, or ``REJECTED``
    when some landmark passed but all of them went to closer candidates. Pairs
    passing both gates are taken greedily by ascending endpoint distance, ties
    broken by landmark id, then by the candidate's plane parameters so the
    outcome does not depend on input order.
    """
    R_wc = T_cw.R.T
    gated = []
    for ci, cand in enumerate(candidates):
        n_w = R_wc @ cand.plane.normal
        key = tuple(cand.plane.normal) + (cand.plane.d,) + tuple(cand.support_endpoints.ravel())
        for lm in landmarks:
            if angle_between_directions(n_w, lm.plane.normal) > cfg.max_normal_angle:
                continue
            dist = endpoint_distance(cand, T_cw, lm)
            if dist <= cfg.max_endpoint_distance:
                gated.append((dist, lm.id, key, ci))
    gated.sort(key=lambda g: g[:3])
    result = {ci: NEW for ci in range(len(candidates))}
    for _, _, _, ci in gated:
        result[ci] = REJECTED
    used_lm, used_c = set(), set()
    for dist, lm_id, _, ci in gated:
        if lm_id in used_lm or ci in used_c:
            continue
        result[ci] = lm_id
        used_lm.add(lm_id)
        used_c.add(ci)
    return sorted(result.items())


def observe(landmark: PlaneLandmark, is_keyframe: bool, cfg: AssociationConfig = AssociationConfig()) -> PlaneLandmark:
    if not is_keyframe:
        return landmark
    count = landmark.keyframe_observations + 1
    return replace(landmark, keyframe_observations=count, valid=landmark.valid or count >= cfg.validity_min)


def is_match(label) -> bool:
    return label is not NEW and label != REJECTED
