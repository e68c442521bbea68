#!/usr/bin/env python3
"""
Tests for camera-distribution analysis and the scene filter rules
"""

import sys
import os
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.curation.camera_geometry import (CameraPose, DistributionClass, FilterPolicy, PrincipalFrame, SceneBundle,
                                          angular_span_deg, aspect_ratio_check, classify_distribution,
                                          compute_center, compute_principal_frame, distance_score, evaluate_scene,
                                          filter_scenes)
from src.planning.trajectory_planner import look_at
from src.utils.errors import DegenerateFrame, EmptyScene, InvalidPose, InvalidRange
from src.utils.rng import make_rng
from src.utils.synthetic import positions_bundle, ring_bundle


def _poses(positions):
    return positions_bundle("s", np.asarray(positions, dtype=np.float64)).poses


def _ellipse_bundle(scene_id, a, b, n=24):
    poses = []
    for i in range(n):
        theta = 2 * math.pi * i / n
        position = np.array([a * math.cos(theta), b * math.sin(theta), 0.0])
        poses.append(CameraPose(rotation=look_at(position, np.zeros(3)), position=position))
    return SceneBundle(scene_id, tuple(poses))


def test_camera_pose_validation():
    """Non-orthonormal rotations and bad intrinsics are rejected"""
    with pytest.raises(InvalidPose):
        CameraPose(rotation=2 * np.eye(3), position=np.zeros(3))
    with pytest.raises(InvalidPose):
        CameraPose(rotation=np.diag([1.0, 1.0, -1.0]), position=np.zeros(3))
    with pytest.raises(InvalidPose):
        CameraPose(rotation=np.eye(3), position=[0.0, np.nan, 0.0])
    with pytest.raises(InvalidPose):
        CameraPose.identity(intrinsics=(100.0, 100.0, 900.0, 10.0))
    pose = CameraPose.identity()
    assert not pose.rotation.flags.writeable


def test_compute_center():
    """Arithmetic mean of camera positions"""
    assert np.allclose(compute_center(_poses([[0, 0, 0], [2, 0, 0], [1, 3, 0]])), [1, 1, 0])
    assert np.array_equal(compute_center(_poses([[5, -2, 7]])), [5, -2, 7])

    positions = make_rng(1, "center").random((32, 3))
    expected = np.zeros(3)
    for p in positions:
        expected += p
    expected /= len(positions)
    assert np.max(np.abs(compute_center(_poses(positions)) - expected)) < 1e-12

    with pytest.raises(EmptyScene):
        compute_center([])


def test_principal_frame_collinear():
    """5 cameras on the x axis"""
    frame = compute_principal_frame(_poses([[k, 0, 0] for k in range(5)]))
    assert np.allclose(frame.axes[0], [1, 0, 0], atol=1e-12)
    assert np.allclose(frame.extents, [4, 0, 0], atol=1e-12)
    assert np.allclose(frame.axes @ frame.axes.T, np.eye(3), atol=1e-12)


def test_principal_frame_square():
    """Square corners give equal dominant extents and world axes"""
    frame = compute_principal_frame(_poses([[1, 1, 0], [1, -1, 0], [-1, 1, 0], [-1, -1, 0]]))
    assert np.allclose(frame.extents, [2, 2, 0], atol=1e-12)
    assert np.allclose(np.abs(frame.axes), np.eye(3), atol=1e-12)


def test_principal_frame_single_camera():
    frame = compute_principal_frame(_poses([[1, 2, 3]]))
    assert np.array_equal(frame.center, [1, 2, 3])
    assert np.allclose(frame.extents, 0)
    assert np.allclose(frame.axes @ frame.axes.T, np.eye(3), atol=1e-12)


def test_principal_frame_matches_covariance_oracle():
    """200 random camera sets against eigendecomposition of the covariance matrix"""
    rng = make_rng(2, "pca-oracle")
    for _ in range(200):
        n = int(rng.integers(4, 65))
        positions = rng.normal(size=(n, 3)) * rng.uniform(0.2, 3.0, size=3)
        frame = compute_principal_frame(_poses(positions))

        centered = positions - positions.mean(axis=0)
        _, vectors = np.linalg.eigh(centered.T @ centered / n)
        for axis in frame.axes:
            assert 1.0 - np.max(np.abs(vectors.T @ axis)) < 1e-9
            # largest-magnitude component is positive
            assert axis[int(np.argmax(np.abs(axis)))] > 0

        for k, axis in enumerate(frame.axes):
            projections = [float(p @ axis) for p in centered]
            assert abs(frame.extents[k] - (max(projections) - min(projections))) < 1e-9
        assert np.all(np.diff(frame.extents) <= 0)


def test_principal_frame_rigid_and_scale_invariance():
    rng = make_rng(3, "rigid")
    positions = rng.normal(size=(20, 3)) * [3.0, 1.5, 0.5]
    frame = compute_principal_frame(_poses(positions))

    rotation = Rotation.from_rotvec([0.3, -0.8, 1.1]).as_matrix()
    t = np.array([4.0, -2.0, 0.5])
    moved = compute_principal_frame(_poses(positions @ rotation.T + t))
    assert np.allclose(moved.center, rotation @ frame.center + t, atol=1e-9)
    assert np.allclose(moved.extents, frame.extents, atol=1e-9)

    scaled = compute_principal_frame(_poses(positions * 2.5))
    assert np.allclose(scaled.center, 2.5 * frame.center, atol=1e-9)
    assert np.allclose(scaled.extents, 2.5 * frame.extents, atol=1e-9)


def test_principal_frame_is_deterministic():
    positions = make_rng(4, "determinism").normal(size=(16, 3))
    a = compute_principal_frame(_poses(positions))
    b = compute_principal_frame(_poses(positions))
    assert np.array_equal(a.axes, b.axes)
    assert np.array_equal(a.extents, b.extents)
    assert np.array_equal(a.center, b.center)


def test_classify_distribution():
    policy = FilterPolicy()
    ring = ring_bundle("ring", n=36)
    assert classify_distribution(ring, compute_principal_frame(ring.poses), policy) == DistributionClass.SURROUND_360

    arc45 = ring_bundle("arc45", n=8, span_deg=45.0)
    assert classify_distribution(arc45, compute_principal_frame(arc45.poses), policy) == DistributionClass.LINEAR

    arc120 = ring_bundle("arc120", n=12, span_deg=120.0)
    assert classify_distribution(arc120, compute_principal_frame(arc120.poses), policy) == DistributionClass.ARC

    single = ring_bundle("one", n=1)
    with pytest.raises(DegenerateFrame):
        classify_distribution(single, compute_principal_frame(single.poses), policy)


def test_classify_random_arc_matches_gap_scan():
    """Random 120 degree arc: span agrees with an exhaustive scan of circular gaps"""
    rng = make_rng(5, "arc")
    start = rng.uniform(0, 2 * math.pi)
    angles = np.sort(start + np.radians(120.0) * np.concatenate([[0.0, 1.0], rng.random(10)]))
    poses = []
    for theta in angles:
        position = np.array([math.cos(theta), math.sin(theta), 0.0])
        poses.append(CameraPose(rotation=look_at(position, np.zeros(3)), position=position))
    bundle = SceneBundle("random-arc", tuple(poses))

    headings = np.degrees(np.mod(angles + math.pi, 2 * math.pi))
    largest_gap = 0.0
    for i, a in enumerate(headings):
        following = [(b - a) % 360.0 for j, b in enumerate(headings) if j != i]
        largest_gap = max(largest_gap, min(following))
    assert abs((360.0 - largest_gap) - 120.0) < 1e-6

    frame = compute_principal_frame(bundle.poses)
    assert classify_distribution(bundle, frame, FilterPolicy()) == DistributionClass.ARC


def test_angular_span():
    assert angular_span_deg(np.array([])) == 0.0
    assert abs(angular_span_deg(np.radians([350.0, 10.0])) - 20.0) < 1e-9
    assert abs(angular_span_deg(np.radians([0.0, 90.0, 180.0, 270.0])) - 270.0) < 1e-9


def test_aspect_ratio_check():
    def frame(extents):
        return PrincipalFrame(np.zeros(3), np.eye(3), np.asarray(extents, dtype=np.float64))

    assert aspect_ratio_check(frame([4, 4, 1]), FilterPolicy(max_xy_aspect_ratio=2.0))
    assert not aspect_ratio_check(frame([10, 1, 1]), FilterPolicy(max_xy_aspect_ratio=2.0))
    assert aspect_ratio_check(frame([3, 2, 1]), FilterPolicy(max_xy_aspect_ratio=1.5))
    assert not aspect_ratio_check(frame([3, 0, 0]), FilterPolicy())


def test_filter_policy_validation():
    with pytest.raises(InvalidRange):
        FilterPolicy(max_xy_aspect_ratio=0.5)
    with pytest.raises(InvalidRange):
        FilterPolicy(distance_weight=-1.0)


def test_distance_score_examples():
    frame = PrincipalFrame(np.zeros(3), np.eye(3), np.ones(3))
    box = (np.full(3, -0.5), np.full(3, 0.5))
    center = positions_bundle("c", np.zeros((1, 3)))
    assert abs(distance_score(center, frame, box) - 0.5) < 1e-12
    on_face = positions_bundle("f", np.array([[0.5, 0.1, -0.2]]))
    assert distance_score(on_face, frame, box) == 0.0


def test_distance_score_matches_face_plane_oracle():
    positions = make_rng(6, "distance").normal(size=(10, 3)) * [2.0, 1.0, 0.5]
    bundle = positions_bundle("r", positions)
    frame = compute_principal_frame(bundle.poses)

    coords = [(p - frame.center) @ frame.axes.T for p in positions]
    lo = [min(c[k] for c in coords) for k in range(3)]
    hi = [max(c[k] for c in coords) for k in range(3)]
    expected = 0.0
    for c in coords:
        expected += min(min(abs(c[k] - lo[k]), abs(hi[k] - c[k])) for k in range(3))
    assert abs(distance_score(bundle, frame) - expected) < 1e-12


def test_distance_score_skips_flat_axis():
    # cameras in the z = 0 plane: the two z faces coincide and are left out
    frame = PrincipalFrame(np.zeros(3), np.eye(3), np.ones(3))
    inner = positions_bundle("inner", np.array([[-1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [0.2, 0.0, 0.0]]))
    assert abs(distance_score(inner, frame) - 0.8) < 1e-12
    box = (np.array([-1.0, -1.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert abs(distance_score(inner, frame, box) - 0.8) < 1e-12
    with pytest.raises(DegenerateFrame):
        distance_score(inner, frame, (np.zeros(3), np.zeros(3)))


def test_evaluate_scene_rejects_elongated():
    report = evaluate_scene(_ellipse_bundle("long", 10.0, 1.0), FilterPolicy())
    assert report.aspect_ok is False
    assert report.accepted is False
    assert report.error is None


def test_filter_scenes_orders_by_score():
    small, large = ring_bundle("small", radius=1.0), ring_bundle("large", radius=3.0)
    ranked = filter_scenes([large, small], FilterPolicy())
    assert [r.scene_id for r in ranked] == ["small", "large"]
    assert all(r.accepted for r in ranked)
    assert abs(ranked[1].distance_score - 3.0 * ranked[0].distance_score) < 1e-9


def test_filter_scenes_matches_oracle_and_is_permutation_invariant():
    policy = FilterPolicy()
    bundles = [
        ring_bundle("ring-a", n=36, radius=1.0),
        ring_bundle("ring-b", n=20, radius=2.0, center=(1.0, 2.0, 0.5)),
        ring_bundle("arc-a", n=12, span_deg=120.0),
        ring_bundle("line-a", n=8, span_deg=45.0, radius=4.0),
        _ellipse_bundle("ellipse-ok", 1.5, 1.0),
        _ellipse_bundle("ellipse-long", 6.0, 1.0),
        ring_bundle("ring-c", n=12, radius=0.5),
        ring_bundle("single", n=1),
    ]
    ranked = filter_scenes(bundles, policy)

    oracle = []
    for bundle in bundles:
        try:
            frame = compute_principal_frame(bundle.poses)
            klass = classify_distribution(bundle, frame, policy)
            accepted = klass == DistributionClass.SURROUND_360 and aspect_ratio_check(frame, policy)
            oracle.append((not accepted, False, distance_score(bundle, frame), bundle.scene_id))
        except DegenerateFrame:
            oracle.append((True, True, 0.0, bundle.scene_id))
    assert [r.scene_id for r in ranked] == [key[3] for key in sorted(oracle)]
    assert ranked[-1].scene_id == "single" and ranked[-1].error

    rng = make_rng(7, "shuffle")
    for _ in range(5):
        shuffled = [bundles[i] for i in rng.permutation(len(bundles))]
        assert [r.to_dict() for r in filter_scenes(shuffled, policy)] == [r.to_dict() for r in ranked]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
