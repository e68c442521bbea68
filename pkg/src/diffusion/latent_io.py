import numpy as np

from src.diffusion.diffusion_orchestrator import LatentVideo
from src.utils.errors import FormatError

LATENT_MAGIC = int.from_bytes(b"LATV", "little")
LATENT_VERSION = 1
LATENT_HEADER = np.dtype([
    ("magic", "<u4"),
    ("version", "<u4"),
    ("shape", "<u4", (4,)),
])


def write_latent(path: str, latent: LatentVideo) -> str:
    """Header (magic, version, F, C, H, W as u32) then the f32 payload, frame-major."""
    header = np.zeros(1, dtype=LATENT_HEADER)
    header["magic"] = LATENT_MAGIC
    header["version"] = LATENT_VERSION
    header["shape"] = latent.shape
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(latent.data.astype("<f4").tobytes(order="C"))
    return path


def read_latent(path: str) -> LatentVideo:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < LATENT_HEADER.itemsize:
        raise FormatError(f"{path}: truncated latent header")
    header = np.frombuffer(blob[:LATENT_HEADER.itemsize], dtype=LATENT_HEADER)[0]
    if header["magic"] != LATENT_MAGIC:
        raise FormatError(f"{path}: not a LATV file")
    if header["version"] != LATENT_VERSION:
        raise FormatError(f"{path}: unsupported latent version {header['version']}")
    shape = tuple(int(v) for v in header["shape"])
    payload = np.frombuffer(blob, dtype="<f4", offset=LATENT_HEADER.itemsize)
    if payload.size != int(np.prod(shape)):
        raise FormatError(f"{path}: payload does not match shape {shape}")
    return LatentVideo(payload.reshape(shape).astype(np.float64))
