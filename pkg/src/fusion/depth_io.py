import os
import json
import logging
from typing import List, Optional

import cv2
import numpy as np

from src.curation.pose_io import pose_from_dict, pose_to_dict
from src.fusion.volumetric_fusion import DepthFrame
from src.utils.errors import FormatError

logger = logging.getLogger(__name__)

# <stem>.depth.png (uint16 millimeters) or <stem>.depth.f32 (float32 meters, row-major),
# <stem>.json with the pose, optional <stem>.color.png
PNG_SUFFIX = ".depth.png"
RAW_SUFFIX = ".depth.f32"
COLOR_SUFFIX = ".color.png"


def _stem(path: str) -> str:
    for suffix in (PNG_SUFFIX, RAW_SUFFIX):
        if path.endswith(suffix):
            return path[:-len(suffix)]
    raise FormatError(f"{path}: not a depth file")


def read_depth_frame(path: str) -> DepthFrame:
    stem = _stem(path)
    sidecar = stem + ".json"
    if not os.path.exists(sidecar):
        raise FormatError(f"{path}: missing pose sidecar {sidecar}")
    try:
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f)
        pose = pose_from_dict(meta["pose"])
        frame_id = int(meta.get("frame_id", 0))
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as e:
        raise FormatError(f"{sidecar}: unreadable pose sidecar ({e})") from e
    width, height = pose.image_size

    if path.endswith(PNG_SUFFIX):
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if raw is None or raw.dtype != np.uint16:
            raise FormatError(f"{path}: expected a 16-bit single-channel PNG")
        depth = raw.astype(np.float64) / 1000.0
    else:
        data = np.fromfile(path, dtype="<f4")
        if data.size != width * height:
            raise FormatError(f"{path}: expected {width * height} floats, found {data.size}")
        depth = data.reshape(height, width).astype(np.float64)

    color = None
    if os.path.exists(stem + COLOR_SUFFIX):
        bgr = cv2.imread(stem + COLOR_SUFFIX, cv2.IMREAD_COLOR)
        if bgr is None:
            raise FormatError(f"{stem + COLOR_SUFFIX}: unreadable color image")
        color = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return DepthFrame(depth=depth, pose=pose, frame_id=frame_id, color=color)


def write_depth_frame(directory: str, stem: str, frame: DepthFrame, raw: bool = False) -> str:
    base = os.path.join(directory, stem)
    with open(base + ".json", "w", encoding="utf-8") as f:
        json.dump({"pose": pose_to_dict(frame.pose), "frame_id": frame.frame_id}, f, sort_keys=True)
    if raw:
        path = base + RAW_SUFFIX
        frame.depth.astype("<f4").tofile(path)
    else:
        path = base + PNG_SUFFIX
        cv2.imwrite(path, np.round(frame.depth * 1000.0).astype(np.uint16))
    if frame.color is not None:
        cv2.imwrite(base + COLOR_SUFFIX, cv2.cvtColor(frame.color, cv2.COLOR_RGB2BGR))
    return path


def list_depth_files(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise FormatError(f"{directory}: not a depth frame directory")
    names = sorted(n for n in os.listdir(directory) if n.endswith((PNG_SUFFIX, RAW_SUFFIX)))
    return [os.path.join(directory, n) for n in names]


def read_depth_directory(directory: str, limit: Optional[int] = None) -> List[DepthFrame]:
    paths = list_depth_files(directory)[:limit]
    frames = [read_depth_frame(p) for p in paths]
    logger.info(f"Read {len(frames)} depth frames from {directory}")
    return frames
