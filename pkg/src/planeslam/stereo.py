"""Rectified pinhole stereo model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BehindCameraError, DegenerateSegmentError, UnreliableDepthError
from .geometry import LineSegment3D

MIN_DISPARITY = 0.1
MAX_DEPTH_BASELINES = 40.0
MIN_SEGMENT_LENGTH = 1e-6


@dataclass(frozen=True)
class StereoIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if min(self.fx, self.fy, self.baseline) <= 0 or min(self.width, self.height) <= 0:
            raise ValueError(f"invalid stereo intrinsics: {self}")

    @property
    def bf(self) -> float:
        return self.fx * self.baseline

    @property
    def max_depth(self) -> float:
        return MAX_DEPTH_BASELINES * self.baseline

    @classmethod
    def euroc_like(cls) -> "StereoIntrinsics":
        """Default rig: 752x480, EuRoC-scale focal length and baseline."""
        return cls(458.0, 458.0, 376.0, 240.0, 0.11, 752, 480)


@dataclass(frozen=True)
class StereoPixel:
    u_l: float
    v: float
    u_r: float

    @property
    def disparity(self) -> float:
        return self.u_l - self.u_r

    def as_array(self) -> np.ndarray:
        return np.array([self.u_l, self.v, self.u_r])


@dataclass(frozen=True)
class StereoLineObservation:
    start: StereoPixel
    end: StereoPixel
    # simulation bookkeeping only; plane association never reads it
    id_hint: Optional[int] = None


@dataclass(frozen=True)
class PointObservation:
    pixel: StereoPixel
    landmark_id: int


def project(K: StereoIntrinsics, p_c) -> StereoPixel:
    x, y, z = np.asarray(p_c, dtype=float)
    if z <= 0:
        raise BehindCameraError(f"point at depth {z} is behind the camera")
    u_l = K.fx * x / z + K.cx
    return StereoPixel(u_l, K.fy * y / z + K.cy, u_l - K.bf / z)


def triangulate(
    K: StereoIntrinsics,
    px: StereoPixel,
    min_disparity: float = MIN_DISPARITY,
    max_depth: Optional[float] = None,
) -> np.ndarray:
    disparity = px.u_l - px.u_r
    if disparity < min_disparity:
        raise UnreliableDepthError(f"disparity {disparity:.4g} px below {min_disparity} px")
    z = K.bf / disparity
    max_depth = K.max_depth if max_depth is None else max_depth
    if z > max_depth:
        raise UnreliableDepthError(f"depth {z:.3f} m beyond maximum {max_depth:.3f} m")
    return np.array([(px.u_l - K.cx) * z / K.fx, (px.v - K.cy) * z / K.fy, z])


def triangulate_segment(K: StereoIntrinsics, obs: StereoLineObservation, **kwargs) -> LineSegment3D:
    ps = triangulate(K, obs.start, **kwargs)
    pe = triangulate(K, obs.end, **kwargs)
    if np.linalg.norm(pe - ps) < MIN_SEGMENT_LENGTH:
        raise DegenerateSegmentError("segment endpoints coincide")
    return LineSegment3D(ps, pe)


def project_batch(K: StereoIntrinsics, P) -> np.ndarray:
    """Vectorized ``project`` for an (N, 3) array; no depth check."""
    P = np.asarray(P, dtype=float)
    z = P[:, 2]
    u_l = K.fx * P[:, 0] / z + K.cx
    return np.stack([u_l, K.fy * P[:, 1] / z + K.cy, u_l - K.bf / z], axis=1)
