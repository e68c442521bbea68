import os
import json

import numpy as np
from PIL import Image

from src.losses.recon_loss import ConfidenceMap, ImageBuffer
from src.utils.errors import FormatError


def read_image(path: str) -> ImageBuffer:
    with Image.open(path) as img:
        return ImageBuffer(np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0)


def write_image(path: str, image: ImageBuffer) -> str:
    Image.fromarray(np.round(image.pixels * 255.0).astype(np.uint8)).save(path)
    return path


def read_confidence(path: str) -> ConfidenceMap:
    """Grayscale PNG scaled to [0, 1], or raw f32 with a {width, height} sidecar JSON."""
    if path.lower().endswith(".png"):
        with Image.open(path) as img:
            return ConfidenceMap(np.asarray(img.convert("L"), dtype=np.float64) / 255.0)
    sidecar = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(sidecar):
        raise FormatError(f"{path}: missing sidecar {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as f:
        meta = json.load(f)
    width, height = int(meta["width"]), int(meta["height"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != width * height:
        raise FormatError(f"{path}: expected {width * height} floats, found {data.size}")
    return ConfidenceMap(data.reshape(height, width).astype(np.float64))


def write_confidence(path: str, conf: ConfidenceMap) -> str:
    height, width = conf.conf.shape
    conf.conf.astype("<f4").tofile(path)
    with open(os.path.splitext(path)[0] + ".json", "w", encoding="utf-8") as f:
        json.dump({"width": width, "height": height}, f)
    return path
