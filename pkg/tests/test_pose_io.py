#!/usr/bin/env python3
"""
Tests for pose manifests and COLMAP text-model ingestion
"""

import sys
import os

import numpy as np
import pytest

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.curation.camera_geometry import SceneBundle
from src.curation.pose_io import (bundle_from_line, bundle_to_line, iter_manifest, iter_scenes, read_colmap_scene,
                                  write_colmap_model, write_manifest)
from src.utils.errors import FormatError, InvalidPose
from src.utils.synthetic import ring_bundle


def test_manifest_round_trip(tmp_path):
    bundles = [ring_bundle("a", n=6), ring_bundle("b", n=4, radius=2.0)]
    path = write_manifest(str(tmp_path / "scenes.jsonl"), bundles)
    items = [item for _, item in iter_manifest(path)]
    assert [b.scene_id for b in items] == ["a", "b"]
    for original, loaded in zip(bundles, items):
        for p, q in zip(original.poses, loaded.poses):
            assert np.array_equal(p.rotation, q.rotation)
            assert np.array_equal(p.position, q.position)
            assert p.intrinsics == q.intrinsics

    path2 = write_manifest(str(tmp_path / "again.jsonl"), items)
    with open(path, "rb") as f1, open(path2, "rb") as f2:
        assert f1.read() == f2.read()


def test_manifest_skips_bad_lines(tmp_path):
    path = tmp_path / "scenes.jsonl"
    good = bundle_to_line(ring_bundle("ok", n=4))
    path.write_text("\n".join([
        good,
        "{not json",
        '{"scene_id": "partial", "poses": [{"rotation": [1, 0]}]}',
        good,
        "",
    ]) + "\n")

    items = list(iter_manifest(str(path)))
    assert [line for line, _ in items] == [1, 2, 3, 4]
    assert isinstance(items[0][1], SceneBundle)
    assert all(isinstance(item, FormatError) for _, item in items[1:])
    assert "duplicate" in str(items[3][1])


def test_bundle_from_line_errors():
    with pytest.raises(FormatError):
        bundle_from_line('{"poses": []}')
    rotation = [1, 0, 0, 0, 1, 0, 0, 0, 2]
    line = ('{"scene_id": "x", "poses": [{"rotation": %s, "position": [0, 0, 0], '
            '"intrinsics": [100, 100, 50, 50], "image_size": [100, 100]}]}' % rotation)
    with pytest.raises(InvalidPose):
        bundle_from_line(line)


def test_read_colmap_scene(tmp_path):
    model = tmp_path / "garden"
    model.mkdir()
    (model / "cameras.txt").write_text(
        "# Camera list with one line of data per camera:\n"
        "1 PINHOLE 640 480 500 510 320 240\n"
        "2 SIMPLE_RADIAL 640 480 450 320 240 0.01\n"
    )
    # camera-from-world: identity rotation, t = -R p
    (model / "images.txt").write_text(
        "# Image list with two lines of data per image:\n"
        "1 1 0 0 0 0 0 -2 1 b.png\n"
        "\n"
        "2 0.7071067811865476 0 0 0.7071067811865476 1 0 0 2 a.png\n"
        "10.0 20.0 -1\n"
    )
    bundle = read_colmap_scene(str(model))
    assert bundle.scene_id == "garden"
    assert len(bundle.poses) == 2

    first, second = bundle.poses
    # a.png: 90 degree turn about z, t = (1, 0, 0)
    assert np.allclose(first.position, [0.0, 1.0, 0.0], atol=1e-12)
    assert first.intrinsics == (450.0, 450.0, 320.0, 240.0)
    assert np.allclose(second.position, [0.0, 0.0, 2.0])
    assert np.allclose(second.rotation, np.eye(3))
    assert second.intrinsics == (500.0, 510.0, 320.0, 240.0)


def test_read_colmap_unknown_camera(tmp_path):
    (tmp_path / "cameras.txt").write_text("1 PINHOLE 64 48 50 50 32 24\n")
    (tmp_path / "images.txt").write_text("1 1 0 0 0 0 0 0 7 x.png\n\n")
    with pytest.raises(FormatError):
        read_colmap_scene(str(tmp_path))


def test_colmap_model_matches_world_poses(tmp_path):
    bundle = ring_bundle("ring", n=8, radius=1.5, center=(0.5, -1.0, 0.25))
    loaded = read_colmap_scene(write_colmap_model(str(tmp_path / "ring"), bundle))
    assert loaded.scene_id == "ring"
    assert np.allclose(loaded.positions(), bundle.positions(), atol=1e-9)
    for p, q in zip(bundle.poses, loaded.poses):
        assert np.allclose(p.rotation, q.rotation, atol=1e-9)
        assert p.intrinsics == q.intrinsics


def test_iter_scenes_over_model_directories(tmp_path):
    write_colmap_model(str(tmp_path / "b_ring"), ring_bundle("x", n=6))
    write_colmap_model(str(tmp_path / "a_arc"), ring_bundle("y", n=5, span_deg=90.0))
    broken = tmp_path / "c_broken"
    broken.mkdir()
    (broken / "images.txt").write_text("")
    (tmp_path / "notes").mkdir()

    items = list(iter_scenes(str(tmp_path)))
    assert [index for index, _ in items] == [1, 2, 3]
    assert [item.scene_id for _, item in items[:2]] == ["a_arc", "b_ring"]
    assert isinstance(items[2][1], FormatError)

    assert [item.scene_id for _, item in iter_scenes(str(tmp_path / "b_ring"))] == ["b_ring"]
    with pytest.raises(FormatError):
        list(iter_scenes(str(tmp_path / "missing.jsonl")))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
