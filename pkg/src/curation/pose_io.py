import os
import json
import logging
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.curation.camera_geometry import CameraPose, ImageSize, Intrinsics, SceneBundle
from src.utils.errors import DForgeError, FormatError

logger = logging.getLogger(__name__)


def pose_to_dict(pose: CameraPose) -> Dict:
    return {
        "rotation": [float(v) for v in pose.rotation.reshape(-1)],
        "position": [float(v) for v in pose.position],
        "intrinsics": [float(v) for v in pose.intrinsics],
        "image_size": [int(v) for v in pose.image_size],
    }


def pose_from_dict(data: Dict) -> CameraPose:
    try:
        rotation = np.asarray(data["rotation"], dtype=np.float64)
        position = np.asarray(data["position"], dtype=np.float64)
        intrinsics = [float(v) for v in data["intrinsics"]]
        image_size = [int(v) for v in data["image_size"]]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed pose record: {e}") from e
    if rotation.size != 9 or position.size != 3 or len(intrinsics) != 4 or len(image_size) != 2:
        raise FormatError("pose record has wrong field lengths")
    return CameraPose(rotation=rotation.reshape(3, 3), position=position,
                      intrinsics=Intrinsics(*intrinsics), image_size=ImageSize(*image_size))


def bundle_to_line(bundle: SceneBundle) -> str:
    record = {
        "scene_id": bundle.scene_id,
        "source": bundle.source,
        "poses": [pose_to_dict(p) for p in bundle.poses],
    }
    return json.dumps(record)


def bundle_from_line(line: str) -> SceneBundle:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e}") from e
    if not isinstance(record, dict) or "scene_id" not in record or "poses" not in record:
        raise FormatError("scene record needs scene_id and poses")
    poses = [pose_from_dict(p) for p in record["poses"]]
    return SceneBundle(scene_id=str(record["scene_id"]), poses=tuple(poses),
                       source=str(record.get("source", "")))


def iter_manifest(path: str) -> Iterator[Tuple[int, Union[SceneBundle, DForgeError]]]:
    """
    Stream a line-delimited pose manifest.

    Yields (line_number, bundle) for good lines and (line_number, error) for
    bad ones, so one corrupt scene never stops the batch. Duplicate scene ids
    are reported as errors.
    """
    seen = set()
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise FormatError(f"{path}: cannot open manifest ({e})") from e
    with f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                bundle = bundle_from_line(line)
            except DForgeError as e:
                logger.warning(f"{path}:{line_no}: skipped ({e})")
                yield line_no, e
                continue
            if bundle.scene_id in seen:
                err = FormatError(f"duplicate scene_id {bundle.scene_id!r}")
                logger.warning(f"{path}:{line_no}: skipped ({err})")
                yield line_no, err
                continue
            seen.add(bundle.scene_id)
            yield line_no, bundle


def write_manifest(path: str, bundles: List[SceneBundle]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for bundle in bundles:
            f.write(bundle_to_line(bundle) + "\n")
    return path


# COLMAP text model: params layout per camera model (distortion terms are ignored here)
_COLMAP_FOCAL = {
    "SIMPLE_PINHOLE": lambda p: (p[0], p[0], p[1], p[2]),
    "PINHOLE": lambda p: (p[0], p[1], p[2], p[3]),
    "SIMPLE_RADIAL": lambda p: (p[0], p[0], p[1], p[2]),
    "RADIAL": lambda p: (p[0], p[0], p[1], p[2]),
    "OPENCV": lambda p: (p[0], p[1], p[2], p[3]),
}


def _data_lines(path: str) -> List[str]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return [line.rstrip("\n") for line in f if not line.startswith("#")]
    except OSError as e:
        raise FormatError(f"{path}: cannot read COLMAP model file ({e})") from e


def read_colmap_cameras(path: str) -> Dict[int, Tuple[Intrinsics, ImageSize]]:
    cameras = {}
    for line in _data_lines(path):
        if not line.strip():
            continue
        parts = line.split()
        try:
            camera_id, model = int(parts[0]), parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(v) for v in parts[4:]]
        except (IndexError, ValueError) as e:
            raise FormatError(f"{path}: bad camera line {line!r}") from e
        if model not in _COLMAP_FOCAL:
            raise FormatError(f"{path}: unsupported camera model {model}")
        cameras[camera_id] = (Intrinsics(*_COLMAP_FOCAL[model](params)), ImageSize(width, height))
    return cameras


def read_colmap_images(path: str, cameras: Dict[int, Tuple[Intrinsics, ImageSize]]) -> List[Tuple[str, CameraPose]]:
    """
    Parse images.txt into (image_name, pose), sorted by image name.

    COLMAP stores camera-from-world as quaternion (QW, QX, QY, QZ) and
    translation; poses here are world-from-camera.
    """
    lines = _data_lines(path)
    images = []
    # every image has a pose line followed by a 2D points line
    for pose_line in lines[0::2]:
        if not pose_line.strip():
            continue
        parts = pose_line.split()
        try:
            qw, qx, qy, qz = (float(v) for v in parts[1:5])
            t = np.array([float(v) for v in parts[5:8]])
            camera_id, name = int(parts[8]), parts[9]
        except (IndexError, ValueError) as e:
            raise FormatError(f"{path}: bad image line {pose_line!r}") from e
        if camera_id not in cameras:
            raise FormatError(f"{path}: image {name} references unknown camera {camera_id}")
        cam_from_world = Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
        rotation = cam_from_world.T
        position = -rotation @ t
        intrinsics, size = cameras[camera_id]
        images.append((name, CameraPose(rotation=rotation, position=position,
                                        intrinsics=intrinsics, image_size=size)))
    images.sort(key=lambda item: item[0])
    return images


def read_colmap_scene(model_dir: str, scene_id: str = "", source: str = "colmap") -> SceneBundle:
    """Convert a COLMAP text model directory into a SceneBundle."""
    cameras = read_colmap_cameras(os.path.join(model_dir, "cameras.txt"))
    images = read_colmap_images(os.path.join(model_dir, "images.txt"), cameras)
    scene_id = scene_id or os.path.basename(os.path.normpath(model_dir))
    logger.info(f"Read COLMAP scene {scene_id}: {len(images)} images")
    return SceneBundle(scene_id=scene_id, poses=tuple(p for _, p in images), source=source)


def write_colmap_model(model_dir: str, bundle: SceneBundle) -> str:
    """Write cameras.txt and images.txt, one PINHOLE camera per image."""
    os.makedirs(model_dir, exist_ok=True)
    camera_lines, image_lines = [], []
    for index, pose in enumerate(bundle.poses, 1):
        params = " ".join(repr(float(v)) for v in pose.intrinsics)
        camera_lines.append(f"{index} PINHOLE {int(pose.image_size.width)} {int(pose.image_size.height)} {params}")
        cam_from_world = pose.rotation.T
        qx, qy, qz, qw = Rotation.from_matrix(cam_from_world).as_quat()
        t = -cam_from_world @ pose.position
        values = " ".join(repr(float(v)) for v in (qw, qx, qy, qz, *t))
        image_lines.append(f"{index} {values} {index} {index:05d}.png")
        # no 2D points
        image_lines.append("")
    with open(os.path.join(model_dir, "cameras.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(camera_lines) + "\n")
    with open(os.path.join(model_dir, "images.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(image_lines) + "\n")
    return model_dir


def _colmap_model_dirs(path: str) -> List[str]:
    if os.path.exists(os.path.join(path, "images.txt")):
        return [path]
    return [os.path.join(path, name) for name in sorted(os.listdir(path))
            if os.path.exists(os.path.join(path, name, "images.txt"))]


def iter_scenes(path: str) -> Iterator[Tuple[int, Union[SceneBundle, DForgeError]]]:
    """
    Stream scenes from a pose manifest or from COLMAP text models.

    A directory holding images.txt is one scene; any other directory gives
    one scene per sub-directory holding images.txt, in name order, numbered
    from 1. Files are read as line-delimited manifests.
    """
    if not os.path.isdir(path):
        yield from iter_manifest(path)
        return
    for index, model_dir in enumerate(_colmap_model_dirs(path), 1):
        try:
            bundle = read_colmap_scene(model_dir)
        except DForgeError as e:
            logger.warning(f"{model_dir}: skipped ({e})")
            yield index, e
            continue
        yield index, bundle
