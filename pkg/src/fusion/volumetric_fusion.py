import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage import measure

from src.curation.camera_geometry import CameraPose
from src.utils.errors import EmptyVolume, GridMismatch, InvalidRange

logger = logging.getLogger(__name__)

DEFAULT_MAX_WEIGHT = 64.0


@dataclass(frozen=True)
class DepthFrame:
    """
    One posed depth image.

    depth is in meters with 0 marking invalid pixels; color, when given, is an
    H x W x 3 uint8 image aligned with depth.
    """
    depth: np.ndarray
    pose: CameraPose
    frame_id: int = 0
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        width, height = self.pose.image_size
        if depth.shape != (height, width):
            raise GridMismatch(f"frame {self.frame_id}: depth {depth.shape} does not match image size {(height, width)}")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise InvalidRange(f"frame {self.frame_id}: depth must be finite and non-negative")
        object.__setattr__(self, "depth", depth)
        if self.color is not None:
            color = np.asarray(self.color, dtype=np.uint8)
            if color.shape != (height, width, 3):
                raise GridMismatch(f"frame {self.frame_id}: color {color.shape} does not match depth")
            object.__setattr__(self, "color", color)


@dataclass(frozen=True)
class TsdfVolume:
    """Dense TSDF grid. Voxel (i, j, k) is centered at origin + (i, j, k) * voxel_size."""
    origin: Tuple[float, float, float]
    voxel_size: float
    dims: Tuple[int, int, int]
    truncation: float
    tsdf: np.ndarray
    weight: np.ndarray
    max_weight: float = DEFAULT_MAX_WEIGHT
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not self.voxel_size > 0:
            raise GridMismatch(f"voxel_size must be positive, got {self.voxel_size}")
        if self.truncation < self.voxel_size:
            raise GridMismatch(f"truncation {self.truncation} is smaller than voxel_size {self.voxel_size}")
        if any(d < 1 for d in self.dims):
            raise GridMismatch(f"dims must be positive, got {self.dims}")
        if self.tsdf.shape != self.dims or self.weight.shape != self.dims:
            raise GridMismatch(f"tsdf/weight grids must have shape {self.dims}")

    @classmethod
    def empty(cls, origin: Sequence[float], voxel_size: float, dims: Sequence[int],
              truncation: Optional[float] = None, max_weight: float = DEFAULT_MAX_WEIGHT) -> "TsdfVolume":
        dims = tuple(int(d) for d in dims)
        return cls(
            origin=tuple(origin),
            voxel_size=float(voxel_size),
            dims=dims,
            truncation=float(truncation if truncation is not None else 4.0 * voxel_size),
            tsdf=np.ones(dims, dtype=np.float64),
            weight=np.zeros(dims, dtype=np.float64),
            max_weight=float(max_weight),
        )

    def voxel_centers(self) -> np.ndarray:
        """(N, 3) world coordinates of all voxel centers, C order over (i, j, k)."""
        grid = np.indices(self.dims, dtype=np.float64).reshape(3, -1).T
        return np.asarray(self.origin) + grid * self.voxel_size

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_colors: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise EmptyVolume("mesh has non-finite vertices")
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise GridMismatch("triangle index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)


@dataclass(frozen=True)
class OccupancyGrid:
    origin: Tuple[float, float, float]
    voxel_size: float
    dims: Tuple[int, int, int]
    occupied: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "occupied", np.asarray(self.occupied, dtype=bool))
        if self.occupied.shape != self.dims:
            raise GridMismatch(f"occupied grid {self.occupied.shape} does not match dims {self.dims}")

    @classmethod
    def empty(cls, origin: Sequence[float], voxel_size: float, dims: Sequence[int]) -> "OccupancyGrid":
        return cls(tuple(origin), float(voxel_size), tuple(dims), np.zeros(tuple(dims), dtype=bool))

    def occupied_centers(self) -> np.ndarray:
        return np.asarray(self.origin) + np.argwhere(self.occupied) * self.voxel_size

    def voxel_index(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.floor((points - np.asarray(self.origin)) / self.voxel_size + 0.5).astype(np.int64)

    def is_occupied(self, points: np.ndarray) -> np.ndarray:
        """Per point: inside the grid and in an occupied voxel. Points outside the grid are free."""
        idx = self.voxel_index(points)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        result = np.zeros(len(idx), dtype=bool)
        hit = idx[inside]
        result[inside] = self.occupied[hit[:, 0], hit[:, 1], hit[:, 2]]
        return result


def integrate_frame(volume: TsdfVolume, frame: DepthFrame) -> TsdfVolume:
    """
    Fuse one depth frame into the volume and return the updated volume.

    Each voxel center is projected to its nearest pixel. With d the depth
    there and z the voxel's camera depth, sdf = d - z; voxels with
    sdf > -truncation take a running average of clamp(sdf / truncation)
    and their weight grows by one up to max_weight.

    Args:
        volume: Volume to update (not modified)
        frame: Posed depth frame

    Returns:
        New TsdfVolume
    """
    fx, fy, cx, cy = frame.pose.intrinsics
    width, height = frame.pose.image_size
    if not (np.isfinite([fx, fy, cx, cy]).all() and fx > 0 and fy > 0):
        raise GridMismatch(f"frame {frame.frame_id}: invalid intrinsics")

    cam = frame.pose.world_to_camera(volume.voxel_centers())
    z = cam[:, 2]
    candidates = np.flatnonzero(z > 0)
    u = np.round(fx * cam[candidates, 0] / z[candidates] + cx).astype(np.int64)
    v = np.round(fy * cam[candidates, 1] / z[candidates] + cy).astype(np.int64)
    in_image = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    candidates, u, v = candidates[in_image], u[in_image], v[in_image]

    depth = frame.depth[v, u]
    sdf = depth - z[candidates]
    keep = (depth > 0) & (sdf > -volume.truncation)
    voxels, u, v, sdf = candidates[keep], u[keep], v[keep], sdf[keep]

    tsdf = volume.tsdf.reshape(-1).copy()
    weight = volume.weight.reshape(-1).copy()
    w_old = weight[voxels]
    sample = np.clip(sdf / volume.truncation, -1.0, 1.0)
    tsdf[voxels] = (w_old * tsdf[voxels] + sample) / (w_old + 1.0)
    weight[voxels] = np.minimum(w_old + 1.0, volume.max_weight)

    color = volume.color
    if frame.color is not None:
        color = (np.zeros(volume.dims + (3,)) if color is None else color).reshape(-1, 3).copy()
        color[voxels] = (w_old[:, None] * color[voxels] + frame.color[v, u]) / (w_old[:, None] + 1.0)
        color = color.reshape(volume.dims + (3,))

    logger.debug(f"Frame {frame.frame_id}: updated {len(voxels)} voxels")
    return replace(volume, tsdf=tsdf.reshape(volume.dims), weight=weight.reshape(volume.dims), color=color)


def fuse_frames(volume: TsdfVolume, frames: Iterable[DepthFrame]) -> TsdfVolume:
    count = 0
    for frame in frames:
        volume = integrate_frame(volume, frame)
        count += 1
    logger.info(f"Fused {count} frames, {int(volume.observed.sum())} voxels observed")
    return volume


def _observed_cubes(observed: np.ndarray) -> np.ndarray:
    """True at (i, j, k) when all 8 corners of the cube starting there are observed."""
    cubes = observed[:-1, :-1, :-1].copy()
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                cubes &= observed[di:observed.shape[0] - 1 + di,
                                  dj:observed.shape[1] - 1 + dj,
                                  dk:observed.shape[2] - 1 + dk]
    return cubes


def _has_crossing(field: np.ndarray, cubes: np.ndarray) -> bool:
    lo = np.full(cubes.shape, np.inf)
    hi = np.full(cubes.shape, -np.inf)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                corner = field[di:field.shape[0] - 1 + di, dj:field.shape[1] - 1 + dj, dk:field.shape[2] - 1 + dk]
                lo = np.minimum(lo, corner)
                hi = np.maximum(hi, corner)
    return bool(np.any(cubes & (lo <= 0) & (hi >= 0) & (lo < hi)))


def _nearest_observed(observed: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Per-voxel index of the nearest observed voxel."""
    nearest = ndimage.distance_transform_edt(~observed, return_distances=False, return_indices=True)
    return tuple(nearest)


def fill_unobserved(volume: TsdfVolume) -> TsdfVolume:
    """Copy of the volume with every unobserved voxel set to its nearest observed voxel."""
    if volume.observed.all():
        return volume
    nearest = _nearest_observed(volume.observed)
    color = None if volume.color is None else volume.color[nearest]
    return replace(volume, tsdf=volume.tsdf[nearest], weight=volume.weight[nearest], color=color)


def extract_mesh(volume: TsdfVolume) -> TriangleMesh:
    """
    Marching-cubes isosurface at tsdf = 0.

    Needs at least one zero crossing inside a fully observed cube. Unobserved
    voxels take the value of their nearest observed voxel before meshing, so
    the surface closes over coverage gaps. Vertices are placed by linear
    interpolation along cube edges and returned in world coordinates; vertex
    colors come from the nearest voxel when the volume carries color.
    """
    if min(volume.dims) < 2:
        raise EmptyVolume("volume too thin for marching cubes")
    if not _has_crossing(volume.tsdf, _observed_cubes(volume.observed)):
        raise EmptyVolume("no observed zero crossing in the volume")

    filled = fill_unobserved(volume)
    try:
        verts, faces, _, _ = measure.marching_cubes(
            filled.tsdf, level=0.0, spacing=(volume.voxel_size,) * 3, method="lewiner")
    except (ValueError, RuntimeError) as e:
        raise EmptyVolume(f"marching cubes failed: {e}") from e
    if len(faces) == 0:
        raise EmptyVolume("marching cubes produced no triangles")

    vertices = np.asarray(volume.origin) + verts.astype(np.float64)
    colors = None
    if filled.color is not None:
        idx = np.clip(np.round(verts / volume.voxel_size).astype(np.int64), 0, np.asarray(volume.dims) - 1)
        colors = np.round(filled.color[idx[:, 0], idx[:, 1], idx[:, 2]]).astype(np.uint8)

    logger.info(f"Extracted mesh: {len(vertices)} vertices, {len(faces)} triangles")
    return TriangleMesh(vertices=vertices, triangles=faces, vertex_colors=colors)


def to_occupancy(volume: TsdfVolume, band: float) -> OccupancyGrid:
    """
    Occupied = observed and tsdf * truncation <= band.

    Unobserved voxels are free. The occupied shell behind a surface is as
    deep as the observed truncation region.
    """
    if band < 0:
        raise InvalidRange(f"occupancy band must be >= 0, got {band}")
    occupied = volume.observed & (volume.tsdf * volume.truncation <= band)
    return OccupancyGrid(volume.origin, volume.voxel_size, volume.dims, occupied)
