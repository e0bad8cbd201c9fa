"""Exception types raised across the package."""


class PlaneSlamError(Exception):
    """Base class for all package errors."""


class DegenerateRotationError(PlaneSlamError):
    """Rotation angle too close to pi for a stable logarithm."""


class BehindCameraError(PlaneSlamError):
    pass


class UnreliableDepthError(PlaneSlamError):
    """Disparity below the configured floor, or depth beyond the maximum."""


class DegenerateSegmentError(PlaneSlamError):
    pass


class SolverError(PlaneSlamError):
    """Normal equations stayed singular after all damping retries."""


class DegenerateTrackingError(SolverError):
    pass


class TrackingLostError(PlaneSlamError):
    def __init__(self, frame_index, reason):
        super().__init__(f"tracking lost at frame {frame_index}: {reason}")
        self.frame_index = frame_index
        self.reason = reason


class SimulationError(PlaneSlamError):
    pass


class DatasetFormatError(PlaneSlamError):
    pass
