import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import pair_on_plane, random_pose
from planeslam.association import (
    NEW,
    REJECTED,
    AssociationConfig,
    PlaneLandmark,
    associate,
    endpoint_distance,
    is_match,
    observe,
)
from planeslam.extraction import plane_from_pair
from planeslam.geometry import LineSegment3D, Plane, Pose, so3_exp, transform_plane, transform_point

CFG = AssociationConfig()
FLOOR = Plane(np.array([0.0, 0.0, 1.0]), 1.0)  # z = -1


def candidate_on(plane, rng, T_cw=Pose.identity(), lift=0.0):
    """Candidate observed from ``T_cw`` of a world plane, optionally lifted along the normal."""
    a, b = pair_on_plane(rng, plane)
    off = lift * plane.normal
    segs = [LineSegment3D(transform_point(T_cw, s.start + off), transform_point(T_cw, s.end + off)) for s in (a, b)]
    return plane_from_pair(*segs)


def test_exact_match():
    rng = np.random.default_rng(0)
    c = candidate_on(FLOOR, rng)
    assert associate([c], Pose.identity(), [PlaneLandmark(7, FLOOR)]) == [(0, 7)]


def test_endpoint_distance_hand_value():
    rng = np.random.default_rng(1)
    c = candidate_on(FLOOR, rng, lift=0.05)
    assert abs(endpoint_distance(c, Pose.identity(), PlaneLandmark(0, FLOOR)) - 0.05) < 1e-12


def test_distance_gate():
    rng = np.random.default_rng(2)
    near = candidate_on(FLOOR, rng, lift=0.059)
    far = candidate_on(FLOOR, rng, lift=0.061)
    lm = [PlaneLandmark(0, FLOOR)]
    assert associate([near], Pose.identity(), lm) == [(0, 0)]
    assert associate([far], Pose.identity(), lm) == [(0, NEW)]


def test_angle_gate():
    rng = np.random.default_rng(3)
    c = candidate_on(FLOOR, rng)
    for deg, expect in ((11.0, 0), (13.0, NEW)):
        # tilt the landmark about an axis through the candidate center so distance stays small
        R = so3_exp([np.deg2rad(deg), 0, 0])
        center = c.support_endpoints.mean(axis=0)
        n = R @ FLOOR.normal
        lm = PlaneLandmark(0, Plane.from_normal(n, -n @ center))
        small = c.support_endpoints - center
        c_small = type(c)(c.plane, center + 0.01 * small, c.source_segment_indices, c.spread)
        assert associate([c_small], Pose.identity(), [lm]) == [(0, expect)]


def test_sign_invariant_normal_gate():
    rng = np.random.default_rng(4)
    c = candidate_on(FLOOR, rng)
    flipped = Plane(-FLOOR.normal, -FLOOR.d)  # same plane, raw opposite sign
    assert associate([c], Pose.identity(), [PlaneLandmark(0, flipped)]) == [(0, 0)]


def test_one_to_one_and_rejected_label():
    rng = np.random.default_rng(5)
    close, farther = candidate_on(FLOOR, rng, lift=0.01), candidate_on(FLOOR, rng, lift=0.03)
    out = dict(associate([farther, close], Pose.identity(), [PlaneLandmark(0, FLOOR)]))
    assert out == {0: REJECTED, 1: 0}
    assert not is_match(REJECTED) and not is_match(NEW) and is_match(0)


def test_empty_inputs():
    rng = np.random.default_rng(6)
    assert associate([], Pose.identity(), [PlaneLandmark(0, FLOOR)]) == []
    assert associate([candidate_on(FLOOR, rng)], Pose.identity(), []) == [(0, NEW)]


def test_camera_frame_candidates():
    rng = np.random.default_rng(7)
    T = random_pose(rng, 0.5, 1.0)
    wall = Plane(np.array([1.0, 0.0, 0.0]), 2.0)
    cands = [candidate_on(FLOOR, rng, T), candidate_on(wall, rng, T)]
    lms = [PlaneLandmark(3, wall), PlaneLandmark(5, FLOOR)]
    assert associate(cands, T, lms) == [(0, 5), (1, 3)]


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40)
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    planes = [Plane.from_normal(rng.normal(size=3), rng.uniform(1, 3)) for _ in range(3)]
    cands = [candidate_on(p, rng, lift=rng.uniform(0, 0.05)) for p in planes for _ in range(2)]
    lms = [PlaneLandmark(i, p) for i, p in enumerate(planes)]
    base = {id(c): lab for c, (_, lab) in zip(cands, associate(cands, Pose.identity(), lms))}
    perm = rng.permutation(len(cands))
    shuffled = [cands[i] for i in perm]
    again = {id(c): lab for c, (_, lab) in zip(shuffled, associate(shuffled, Pose.identity(), lms[::-1]))}
    assert base == again
    matched = [lab for lab in base.values() if is_match(lab)]
    assert len(matched) == len(set(matched))


def test_validity_rule():
    lm = PlaneLandmark(0, FLOOR)
    for k in range(1, 6):
        lm = observe(lm, is_keyframe=True)
        assert lm.keyframe_observations == k and lm.valid == (k >= 3)
    lm2 = observe(PlaneLandmark(1, FLOOR), is_keyframe=False)
    assert lm2.keyframe_observations == 0 and not lm2.valid


def test_support_is_capped():
    lm = PlaneLandmark(0, FLOOR)
    for _ in range(40):
        lm = lm.with_support(np.zeros((4, 3)))
    assert len(lm.support_endpoints) == 64
