"""Candidate planes from pairs of intersecting 3D line segments.

Two segments form a candidate pair when they are clearly non-parallel and
their centres are closer than the shorter segment's length. The plane normal
is the cross product of the two directions; the offset is the mean of the
four per-endpoint offsets, and the pair is kept only if those offsets spread
by no more than ``coplanarity_max``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .geometry import LineSegment3D, Plane, angle_between_directions, canonicalize

CROSS_EPS = 1e-9


@dataclass(frozen=True)
class ExtractionConfig:
    min_angle: float = np.deg2rad(10.0)
    coplanarity_max: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.min_angle < np.pi / 2):
            raise ValueError("min_angle must lie in (0, pi/2)")
        if self.coplanarity_max <= 0:
            raise ValueError("coplanarity_max must be positive")


@dataclass(frozen=True, eq=False)
class CandidatePlane:
    plane: Plane
    support_endpoints: np.ndarray  # (4, 3), frame of the input segments
    source_segment_indices: Tuple[int, int]
    spread: float


def is_candidate_pair(a: LineSegment3D, b: LineSegment3D, cfg: ExtractionConfig = ExtractionConfig()) -> bool:
    if angle_between_directions(a.direction, b.direction) <= cfg.min_angle:
        return False
    # "the length of the line" is read as the shorter of the two
    return float(np.linalg.norm(a.center - b.center)) < min(a.length, b.length)


def plane_from_pair(
    a: LineSegment3D,
    b: LineSegment3D,
    cfg: ExtractionConfig = ExtractionConfig(),
    indices: Tuple[int, int] = (0, 1),
) -> Optional[CandidatePlane]:
    """Plane through two segments, or ``None`` if they are not coplanar enough."""
    n = np.cross(a.direction, b.direction)
    norm = np.linalg.norm(n)
    if norm < CROSS_EPS:
        return None
    n = n / norm
    pts = np.stack([a.start, a.end, b.start, b.end])
    dk = -(pts @ n)
    spread = float(dk.max() - dk.min())
    if spread > cfg.coplanarity_max:
        return None
    return CandidatePlane(canonicalize(Plane(n, float(dk.mean()))), pts, indices, spread)


def extract_planes(segments: Sequence[LineSegment3D], cfg: ExtractionConfig = ExtractionConfig()) -> List[CandidatePlane]:
    out = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            a, b = segments[i], segments[j]
            if not is_candidate_pair(a, b, cfg):
                continue
            cand = plane_from_pair(a, b, cfg, (i, j))
            if cand is not None:
                out.append(cand)
    return out
