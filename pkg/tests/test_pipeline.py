import numpy as np
import pytest

from planeslam.errors import TrackingLostError
from planeslam.evaluation import ate_rmse
from planeslam.frames import Frame
from planeslam.pipeline import KeyframePolicy, PipelineConfig, StereoPlaneSlam
from planeslam.simulator import NoiseSpec, simulate


def invalid_plane_guard(slam):
    """Hook asserting every graph plane is a valid map landmark; returns the call log."""
    seen = []

    def hook(graph, m, stage):
        for gp in graph.planes:
            owners = [lm for lm in m.planes.values()
                      if np.array_equal(lm.plane.normal, gp.normal) and lm.plane.d == gp.d]
            assert owners, "graph plane does not correspond to a map landmark"
            assert all(lm.valid for lm in owners), f"invalid plane entered the {stage} graph"
        seen.append((stage, len(graph.planes)))

    slam.graph_hooks.append(hook)
    return seen


@pytest.fixture(scope="module")
def noise_free_room():
    ds = simulate("room", 30, NoiseSpec.noiseless())
    slam = StereoPlaneSlam(ds.intrinsics)
    seen = invalid_plane_guard(slam)
    slam.run(ds.frames)
    return ds, slam, seen


def test_noise_free_room_is_exact(noise_free_room):
    ds, slam, seen = noise_free_room
    assert ate_rmse(slam.trajectory(), ds.gt_poses) < 1e-6
    assert len(slam.map.valid_planes()) >= 3
    assert any(n > 0 for stage, n in seen if stage == "tracking")
    assert any(n > 0 for stage, n in seen if stage == "local_ba")


def test_valid_landmarks_match_true_planes(noise_free_room):
    ds, slam, _ = noise_free_room
    for lm in slam.map.valid_planes():
        truth = ds.gt_planes[lm.source_hint]
        assert np.linalg.norm(lm.plane.normal - truth.normal) < 1e-6 and abs(lm.plane.d - truth.d) < 1e-6


def test_record_counts_consistent(noise_free_room):
    _, slam, _ = noise_free_room
    for r in slam.records:
        assert r.matched_planes + r.new_planes + r.rejected_planes == r.candidates
        assert r.tracking_planes <= r.matched_planes
        assert r.new_planes == 0 or r.is_keyframe
    assert slam.records[0].is_keyframe and slam.records[0].tracking_planes == 0
    assert sum(r.new_planes for r in slam.records) == len(slam.map.planes)


def test_validity_requires_three_keyframes(noise_free_room):
    _, slam, _ = noise_free_room
    for lm in slam.map.planes.values():
        assert lm.valid == (lm.keyframe_observations >= 3)
        seen = sum(lm.id in kf.plane_obs for kf in slam.map.keyframes)
        assert seen == lm.keyframe_observations


def test_points_only_mode_ignores_lines():
    ds = simulate("room", 15, NoiseSpec(seed=2))
    slam = StereoPlaneSlam(ds.intrinsics, PipelineConfig(mode="points-only"))
    seen = invalid_plane_guard(slam)
    slam.run(ds.frames)
    assert not slam.map.planes and all(n == 0 for _, n in seen)
    assert ate_rmse(slam.trajectory(), ds.gt_poses) < 0.05


def test_lineless_frames_degrade_to_points():
    ds = simulate("room", 15, NoiseSpec(seed=3))
    frames = [Frame(f.timestamp, f.point_observations, [], f.intrinsics, f.index) for f in ds.frames]
    a = StereoPlaneSlam(ds.intrinsics)
    a.run(frames)
    b = StereoPlaneSlam(ds.intrinsics, PipelineConfig(mode="points-only"))
    b.run(frames)
    assert not a.map.planes
    for pa, pb in zip(a.trajectory(), b.trajectory()):
        assert np.array_equal(pa.matrix(), pb.matrix())


def test_noisy_room_tracks():
    ds = simulate("room", 40, NoiseSpec(seed=1))
    slam = StereoPlaneSlam(ds.intrinsics)
    invalid_plane_guard(slam)
    slam.run(ds.frames)
    assert len(slam.trajectory()) == 40
    assert ate_rmse(slam.trajectory(), ds.gt_poses) < 0.05


def test_keyframe_policy_frame_gap():
    ds = simulate("minimal", 25, NoiseSpec.noiseless(), trajectory="static")
    slam = StereoPlaneSlam(ds.intrinsics, PipelineConfig(keyframes=KeyframePolicy(max_frame_gap=10)))
    slam.run(ds.frames)
    assert [r.frame_index for r in slam.records if r.is_keyframe] == [0, 10, 20]


def test_tracking_lost_when_no_points():
    ds = simulate("room", 3, NoiseSpec.noiseless())
    slam = StereoPlaneSlam(ds.intrinsics)
    slam.process_frame(ds.frames[0])
    empty = Frame(ds.frames[1].timestamp, [], [], ds.intrinsics, 1)
    with pytest.raises(TrackingLostError):
        slam.process_frame(empty)


def test_config_rejects_unknown_mode():
    with pytest.raises(ValueError):
        PipelineConfig(mode="lines-only")
