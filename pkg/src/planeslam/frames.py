"""Per-frame observation container shared by the simulator, dataset IO and pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

from .stereo import PointObservation, StereoIntrinsics, StereoLineObservation


@dataclass
class Frame:
    timestamp: float
    point_observations: List[PointObservation]
    line_observations: List[StereoLineObservation]
    intrinsics: StereoIntrinsics
    index: int = field(default=0, compare=False)
