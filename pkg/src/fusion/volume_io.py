import logging

import numpy as np
import trimesh

from src.fusion.volumetric_fusion import DEFAULT_MAX_WEIGHT, OccupancyGrid, TriangleMesh, TsdfVolume
from src.utils.errors import FormatError

logger = logging.getLogger(__name__)

VOLUME_MAGIC = b"TSDF"
OCCUPANCY_MAGIC = b"OCCG"
FORMAT_VERSION = 1

# 60 bytes, little-endian, no padding
VOLUME_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("dims", "<u4", (3,)),
    ("voxel_size", "<f8"),
    ("origin", "<f8", (3,)),
    ("truncation", "<f8"),
])

OCCUPANCY_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("dims", "<u4", (3,)),
    ("voxel_size", "<f8"),
    ("origin", "<f8", (3,)),
])


def _header(dtype: np.dtype, magic: bytes, dims, voxel_size, origin, **extra) -> bytes:
    header = np.zeros(1, dtype=dtype)
    header["magic"] = magic
    header["version"] = FORMAT_VERSION
    header["dims"] = dims
    header["voxel_size"] = voxel_size
    header["origin"] = origin
    for key, value in extra.items():
        header[key] = value
    return header.tobytes()


def _read_header(blob: bytes, dtype: np.dtype, magic: bytes, path: str) -> np.void:
    if len(blob) < dtype.itemsize:
        raise FormatError(f"{path}: truncated header")
    header = np.frombuffer(blob[:dtype.itemsize], dtype=dtype)[0]
    if header["magic"] != magic:
        raise FormatError(f"{path}: bad magic {header['magic']!r}, expected {magic!r}")
    if header["version"] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {header['version']}")
    return header


def write_volume(path: str, volume: TsdfVolume) -> str:
    """Header, then tsdf and weight as little-endian f32 in x-fastest order."""
    with open(path, "wb") as f:
        f.write(_header(VOLUME_HEADER, VOLUME_MAGIC, volume.dims, volume.voxel_size,
                        volume.origin, truncation=volume.truncation))
        f.write(volume.tsdf.astype("<f4").tobytes(order="F"))
        f.write(volume.weight.astype("<f4").tobytes(order="F"))
    return path


def read_volume(path: str, max_weight: float = DEFAULT_MAX_WEIGHT) -> TsdfVolume:
    with open(path, "rb") as f:
        blob = f.read()
    header = _read_header(blob, VOLUME_HEADER, VOLUME_MAGIC, path)
    dims = tuple(int(d) for d in header["dims"])
    count = int(np.prod(dims))
    payload = np.frombuffer(blob, dtype="<f4", offset=VOLUME_HEADER.itemsize)
    if payload.size != 2 * count:
        raise FormatError(f"{path}: expected {2 * count} voxels of payload, found {payload.size}")
    tsdf = payload[:count].reshape(dims, order="F").astype(np.float64)
    weight = payload[count:].reshape(dims, order="F").astype(np.float64)
    return TsdfVolume(origin=tuple(header["origin"]), voxel_size=float(header["voxel_size"]), dims=dims,
                      truncation=float(header["truncation"]), tsdf=tsdf, weight=weight, max_weight=max_weight)


def write_occupancy(path: str, grid: OccupancyGrid) -> str:
    """Header, then one bit per voxel (numpy packbits, x-fastest order)."""
    with open(path, "wb") as f:
        f.write(_header(OCCUPANCY_HEADER, OCCUPANCY_MAGIC, grid.dims, grid.voxel_size, grid.origin))
        f.write(np.packbits(grid.occupied.reshape(-1, order="F")).tobytes())
    return path


def read_occupancy(path: str) -> OccupancyGrid:
    with open(path, "rb") as f:
        blob = f.read()
    header = _read_header(blob, OCCUPANCY_HEADER, OCCUPANCY_MAGIC, path)
    dims = tuple(int(d) for d in header["dims"])
    count = int(np.prod(dims))
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=OCCUPANCY_HEADER.itemsize))
    if bits.size < count or bits.size - count >= 8:
        raise FormatError(f"{path}: occupancy payload does not match dims {dims}")
    occupied = bits[:count].astype(bool).reshape(dims, order="F")
    return OccupancyGrid(tuple(header["origin"]), float(header["voxel_size"]), dims, occupied)


def write_mesh_ply(path: str, mesh: TriangleMesh) -> str:
    """ASCII PLY, vertices in extraction order."""
    tm = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles,
                         vertex_colors=mesh.vertex_colors, process=False)
    tm.export(path, file_type="ply", encoding="ascii")
    logger.info(f"Wrote mesh to {path}")
    return path


def read_mesh_ply(path: str) -> TriangleMesh:
    tm = trimesh.load(path, file_type="ply", process=False)
    colors = None
    if tm.visual.kind == "vertex":
        colors = np.asarray(tm.visual.vertex_colors)[:, :3]
    return TriangleMesh(vertices=np.asarray(tm.vertices), triangles=np.asarray(tm.faces), vertex_colors=colors)
