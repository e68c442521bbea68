import os
import json
import logging
from typing import List, Optional, Tuple

import cv2
import numpy as np
from PIL import Image

from src.curation.flow_filter import FlowField, MaskFrame
from src.utils.errors import FormatError

logger = logging.getLogger(__name__)

FLO_EXT = ".flo"
RAW_EXT = ".f32"


def read_flo(path: str, frame_index: int = 0) -> FlowField:
    """Read a Middlebury .flo file (PIEH header, interleaved float32 u/v)."""
    with open(path, "rb") as f:
        if f.read(4) != b"PIEH":
            raise FormatError(f"{path}: missing PIEH magic")
    flow = cv2.readOpticalFlow(path)
    if flow is None or flow.ndim != 3 or flow.shape[2] != 2:
        raise FormatError(f"{path}: unreadable flow file")
    return FlowField(u=flow[..., 0], v=flow[..., 1], frame_index=frame_index)


def write_flo(path: str, flow: FlowField) -> str:
    data = np.stack([flow.u, flow.v], axis=-1).astype(np.float32)
    if not cv2.writeOpticalFlow(path, data):
        raise FormatError(f"{path}: could not write flow")
    return path


def read_raw_flow(path: str) -> FlowField:
    """Planar raw float32 flow (u plane then v plane) with a sidecar JSON giving width/height."""
    sidecar = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(sidecar):
        raise FormatError(f"{path}: missing sidecar {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as f:
        meta = json.load(f)
    width, height = int(meta["width"]), int(meta["height"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != 2 * width * height:
        raise FormatError(f"{path}: expected {2 * width * height} floats, found {data.size}")
    planes = data.reshape(2, height, width)
    return FlowField(u=planes[0], v=planes[1], frame_index=int(meta.get("frame_index", 0)))


def write_raw_flow(path: str, flow: FlowField) -> str:
    height, width = flow.shape
    np.stack([flow.u, flow.v]).astype("<f4").tofile(path)
    with open(os.path.splitext(path)[0] + ".json", "w", encoding="utf-8") as f:
        json.dump({"width": width, "height": height, "frame_index": flow.frame_index}, f)
    return path


def list_flow_files(directory: str) -> List[str]:
    names = sorted(n for n in os.listdir(directory) if n.endswith((FLO_EXT, RAW_EXT)))
    return [os.path.join(directory, n) for n in names]


def read_flow_sequence(directory: str) -> List[FlowField]:
    """Read all flow files of one video in name order; frame_index follows that order."""
    flows = []
    for i, path in enumerate(list_flow_files(directory)):
        flow = read_flo(path, i) if path.endswith(FLO_EXT) else read_raw_flow(path)
        flows.append(FlowField(u=flow.u, v=flow.v, frame_index=i))
    return flows


def read_mask_sequence(directory: str) -> List[MaskFrame]:
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    masks = []
    for i, name in enumerate(names):
        with Image.open(os.path.join(directory, name)) as img:
            masks.append(MaskFrame(mask=np.asarray(img.convert("L")) > 127, frame_index=i))
    return masks


def write_mask(path: str, mask: MaskFrame) -> str:
    Image.fromarray(mask.mask.astype(np.uint8) * 255).save(path)
    return path


def discover_videos(root: str) -> List[Tuple[str, str]]:
    """
    Map a flow directory to (video_id, directory) pairs.

    A directory holding flow files directly is one video; otherwise each
    sub-directory holding flow files is a video.
    """
    if list_flow_files(root):
        return [(os.path.basename(os.path.normpath(root)), root)]
    videos = []
    for name in sorted(os.listdir(root)):
        sub = os.path.join(root, name)
        if os.path.isdir(sub) and list_flow_files(sub):
            videos.append((name, sub))
    return videos


def mask_dir_for(mask_root: Optional[str], video_id: str, single: bool) -> Optional[str]:
    if mask_root is None:
        return None
    candidate = mask_root if single else os.path.join(mask_root, video_id)
    return candidate if os.path.isdir(candidate) else None
