#!/usr/bin/env python3
"""
Tests for TSDF fusion, mesh extraction, occupancy and the volume/mesh/depth file formats
"""

import sys
import os
import json

import numpy as np
import pytest
import trimesh

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.fusion.depth_io import read_depth_directory, read_depth_frame, write_depth_frame
from src.fusion.volume_io import (VOLUME_HEADER, read_mesh_ply, read_occupancy, read_volume, write_mesh_ply,
                                  write_occupancy, write_volume)
from src.fusion.volumetric_fusion import (DepthFrame, OccupancyGrid, TsdfVolume, extract_mesh, fill_unobserved,
                                          fuse_frames, integrate_frame, to_occupancy)
from src.utils.errors import EmptyVolume, FormatError, GridMismatch, InvalidRange
from src.utils.rng import make_rng
from src.utils.synthetic import analytic_plane_volume, analytic_sphere_volume, plane_frame, sphere_frames

SPHERE_RADIUS = 0.5


def _plane_volume():
    # voxel centers at z = 1.525 + 0.05 k, so the plane at 2.0 falls between k = 9 and k = 10
    return TsdfVolume.empty((-0.2, -0.2, 1.525), 0.05, (9, 9, 20), truncation=0.2)


@pytest.fixture(scope="module")
def fused_sphere():
    volume = TsdfVolume.empty((-0.63, -0.63, -0.63), 0.02, (64, 64, 64))
    return fuse_frames(volume, sphere_frames(24, SPHERE_RADIUS))


def _edge_counts(triangles):
    edges = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


def test_plane_sign_change():
    volume = integrate_frame(_plane_volume(), plane_frame(2.0))
    assert np.all(volume.observed[:, :, :14])
    assert not np.any(volume.observed[:, :, 14:])
    assert np.all(volume.tsdf[:, :, :10] > 0)
    assert np.all(volume.tsdf[:, :, 10:14] < 0)
    assert np.all(np.abs(volume.tsdf) <= 1.0)


def test_integrating_twice_keeps_values():
    frame = plane_frame(2.0)
    once = integrate_frame(_plane_volume(), frame)
    twice = integrate_frame(once, frame)
    assert np.array_equal(once.tsdf, twice.tsdf)
    assert np.array_equal(twice.weight, 2 * once.weight)


def test_weight_is_capped():
    frame = plane_frame(2.0)
    volume = TsdfVolume.empty((-0.2, -0.2, 1.525), 0.05, (9, 9, 20), truncation=0.2, max_weight=3.0)
    for _ in range(5):
        volume = integrate_frame(volume, frame)
    assert volume.weight.max() == 3.0


def test_sphere_signs_match_analytic_distance(fused_sphere):
    observed = fused_sphere.observed.reshape(-1)
    distance = np.linalg.norm(fused_sphere.voxel_centers(), axis=1) - SPHERE_RADIUS
    signs_agree = np.sign(fused_sphere.tsdf.reshape(-1)) == np.sign(distance)
    assert observed.sum() > 0
    assert signs_agree[observed].mean() >= 0.99
    assert np.all(np.abs(fused_sphere.tsdf) <= 1.0)


def test_fusion_order_invariance():
    frames = sphere_frames(24, SPHERE_RADIUS)[::4]
    empty = TsdfVolume.empty((-0.62, -0.62, -0.62), 0.04, (32, 32, 32))
    reference = fuse_frames(empty, frames)
    rng = make_rng(0, "order")
    for _ in range(3):
        shuffled = fuse_frames(empty, [frames[i] for i in rng.permutation(len(frames))])
        assert np.max(np.abs(shuffled.tsdf - reference.tsdf)) < 1e-6
        assert np.array_equal(shuffled.weight, reference.weight)


def test_analytic_sphere_mesh():
    volume = analytic_sphere_volume(SPHERE_RADIUS)
    mesh = extract_mesh(volume)
    residual = np.abs(np.linalg.norm(mesh.vertices, axis=1) - SPHERE_RADIUS)
    assert residual.mean() < volume.voxel_size
    assert np.all(_edge_counts(mesh.triangles) == 2)


def test_fused_sphere_mesh_is_watertight(fused_sphere):
    mesh = extract_mesh(fused_sphere)
    residual = np.abs(np.linalg.norm(mesh.vertices, axis=1) - SPHERE_RADIUS)
    assert residual.mean() < fused_sphere.voxel_size
    assert np.all(_edge_counts(mesh.triangles) == 2)
    assert trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False).is_watertight


def test_mesh_closes_over_unobserved_patch():
    volume = analytic_sphere_volume(SPHERE_RADIUS)
    centers = volume.voxel_centers().reshape(volume.dims + (3,))
    patch = np.linalg.norm(centers - [0.0, 0.0, SPHERE_RADIUS], axis=-1) < 0.06
    weight = np.where(patch, 0.0, volume.weight)
    tsdf = np.where(patch, 1.0, volume.tsdf)
    holed = TsdfVolume(volume.origin, volume.voxel_size, volume.dims, volume.truncation, tsdf, weight)

    mesh = extract_mesh(holed)
    residual = np.abs(np.linalg.norm(mesh.vertices, axis=1) - SPHERE_RADIUS)
    assert residual.mean() < volume.voxel_size
    assert np.all(_edge_counts(mesh.triangles) == 2)


def test_fill_unobserved_copies_nearest_value():
    dims = (4, 1, 1)
    tsdf = np.array([-0.5, 1.0, 1.0, 0.25]).reshape(dims)
    weight = np.array([1.0, 0.0, 0.0, 1.0]).reshape(dims)
    filled = fill_unobserved(TsdfVolume((0, 0, 0), 0.1, dims, 0.4, tsdf, weight))
    assert filled.tsdf.ravel().tolist() == [-0.5, -0.5, 0.25, 0.25]
    assert filled.observed.all()


def test_plane_mesh_with_zero_layer():
    dims = (8, 8, 8)
    k = np.indices(dims)[2].astype(np.float64)
    # zero exactly on the k = 3 layer, voxel centers at z = 0.05 k
    volume = TsdfVolume((0, 0, 0), 0.05, dims, 0.2, (k - 3) / 4.0, np.ones(dims))
    mesh = extract_mesh(volume)
    assert len(mesh.triangles) > 0
    assert np.all(np.abs(mesh.vertices[:, 2] - 0.15) < 1e-9)


def test_plane_mesh():
    volume = analytic_plane_volume(0.37)
    mesh = extract_mesh(volume)
    assert len(mesh.triangles) > 0
    assert np.all(np.abs(mesh.vertices[:, 2] - 0.37) < volume.voxel_size)


def test_fused_plane_mesh_carries_color():
    plain = plane_frame(2.0)
    color = np.zeros((48, 64, 3), dtype=np.uint8)
    color[...] = (10, 200, 30)
    frame = DepthFrame(depth=plain.depth, pose=plain.pose, color=color)
    mesh = extract_mesh(integrate_frame(_plane_volume(), frame))
    assert np.all(np.abs(mesh.vertices[:, 2] - 2.0) < 0.05)
    assert np.all(mesh.vertex_colors == [10, 200, 30])


def test_mesh_needs_observed_crossing():
    dims = (8, 8, 8)
    positive = TsdfVolume((0, 0, 0), 0.1, dims, 0.4, np.ones(dims), np.ones(dims))
    with pytest.raises(EmptyVolume):
        extract_mesh(positive)
    with pytest.raises(EmptyVolume):
        extract_mesh(TsdfVolume.empty((0, 0, 0), 0.1, dims))


def test_occupancy_band_zero_on_plane():
    volume = integrate_frame(_plane_volume(), plane_frame(2.0))
    occupancy = to_occupancy(volume, 0.0)
    assert np.all(occupancy.occupied[:, :, 10:14])
    assert not np.any(occupancy.occupied[:, :, :10])
    assert not np.any(occupancy.occupied[:, :, 14:])
    with pytest.raises(InvalidRange):
        to_occupancy(volume, -0.1)


def test_occupancy_contains_observed_interior(fused_sphere):
    occupancy = to_occupancy(fused_sphere, SPHERE_RADIUS)
    distance = (np.linalg.norm(fused_sphere.voxel_centers(), axis=1) - SPHERE_RADIUS).reshape(fused_sphere.dims)
    inside = fused_sphere.observed & (distance <= 0)
    assert np.all(occupancy.occupied[inside])
    assert not np.any(occupancy.occupied[~fused_sphere.observed])


def test_occupancy_monotone_in_band(fused_sphere):
    previous = None
    for band in np.linspace(0.0, 0.1, 6):
        occupied = to_occupancy(fused_sphere, band).occupied
        if previous is not None:
            assert np.all(occupied[previous])
        previous = occupied


def test_empty_volume_is_free():
    occupancy = to_occupancy(TsdfVolume.empty((0, 0, 0), 0.1, (5, 5, 5)), 1.0)
    assert not occupancy.occupied.any()
    assert not occupancy.is_occupied(np.array([[0.2, 0.2, 0.2], [5.0, 5.0, 5.0]])).any()


def test_grid_validation():
    frame = plane_frame(2.0)
    with pytest.raises(GridMismatch):
        DepthFrame(depth=np.ones((3, 3)), pose=frame.pose)
    with pytest.raises(InvalidRange):
        DepthFrame(depth=-frame.depth, pose=frame.pose)
    with pytest.raises(GridMismatch):
        TsdfVolume.empty((0, 0, 0), 0.1, (4, 4, 4), truncation=0.05)


def test_volume_file_round_trip(tmp_path):
    volume = integrate_frame(_plane_volume(), plane_frame(2.0))
    path = write_volume(str(tmp_path / "scene.tsdf"), volume)
    assert VOLUME_HEADER.itemsize == 60
    assert os.path.getsize(path) == 60 + 8 * 9 * 9 * 20

    loaded = read_volume(path)
    assert loaded.dims == volume.dims
    assert loaded.origin == volume.origin
    assert loaded.truncation == volume.truncation
    assert np.array_equal(loaded.tsdf, volume.tsdf.astype(np.float32))
    assert np.array_equal(loaded.weight, volume.weight)

    with open(path, "r+b") as f:
        f.write(b"XXXX")
    with pytest.raises(FormatError):
        read_volume(path)


def test_occupancy_file_round_trip(tmp_path):
    occupied = make_rng(1, "bits").random((5, 6, 7)) < 0.3
    grid = OccupancyGrid((0.0, 0.0, 0.0), 0.1, (5, 6, 7), occupied)
    loaded = read_occupancy(write_occupancy(str(tmp_path / "scene.occ"), grid))
    assert loaded.dims == (5, 6, 7)
    assert np.array_equal(loaded.occupied, occupied)


def test_mesh_ply_round_trip(tmp_path):
    mesh = extract_mesh(analytic_plane_volume(0.37))
    loaded = read_mesh_ply(write_mesh_ply(str(tmp_path / "plane.ply"), mesh))
    assert np.array_equal(loaded.triangles, mesh.triangles)
    assert np.allclose(loaded.vertices, mesh.vertices, atol=1e-6)


def test_depth_files_round_trip(tmp_path):
    frames = sphere_frames(4, SPHERE_RADIUS)
    write_depth_frame(str(tmp_path), "view_000", frames[0], raw=True)
    write_depth_frame(str(tmp_path), "view_001", frames[1])

    raw = read_depth_frame(str(tmp_path / "view_000.depth.f32"))
    assert np.array_equal(raw.depth, frames[0].depth.astype(np.float32))
    assert np.array_equal(raw.pose.rotation, frames[0].pose.rotation)

    png = read_depth_frame(str(tmp_path / "view_001.depth.png"))
    assert np.max(np.abs(png.depth - frames[1].depth)) <= 0.0005 + 1e-12

    assert len(read_depth_directory(str(tmp_path))) == 2
    os.remove(tmp_path / "view_000.json")
    with pytest.raises(FormatError):
        read_depth_frame(str(tmp_path / "view_000.depth.f32"))


def test_depth_sidecar_without_pose(tmp_path):
    write_depth_frame(str(tmp_path), "view_000", plane_frame(2.0))
    (tmp_path / "view_000.json").write_text(json.dumps({"frame_id": 0}))
    with pytest.raises(FormatError):
        read_depth_frame(str(tmp_path / "view_000.depth.png"))
    (tmp_path / "view_000.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_depth_frame(str(tmp_path / "view_000.depth.png"))
    with pytest.raises(FormatError):
        read_depth_directory(str(tmp_path / "missing"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
