"""Synthetic scenes, depth renders, flows and latents for tests and demos."""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.curation.camera_geometry import CameraPose, Intrinsics, ImageSize, SceneBundle
from src.curation.flow_filter import FlowField, MaskFrame
from src.fusion.volumetric_fusion import DepthFrame, TsdfVolume
from src.planning.trajectory_planner import look_at

SPHERE_INTRINSICS = Intrinsics(110.0, 110.0, 64.0, 64.0)
SPHERE_IMAGE = ImageSize(128, 128)


def ring_bundle(scene_id: str = "ring", n: int = 36, radius: float = 1.0, span_deg: float = 360.0,
                center: Sequence[float] = (0.0, 0.0, 0.0), source: str = "synthetic") -> SceneBundle:
    """n cameras on a horizontal arc of span_deg around center, all looking at it."""
    center = np.asarray(center, dtype=np.float64)
    step = math.radians(span_deg) / (n if span_deg >= 360.0 else max(n - 1, 1))
    poses = []
    for i in range(n):
        azimuth = i * step
        position = center + radius * np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        poses.append(CameraPose(rotation=look_at(position, center), position=position))
    return SceneBundle(scene_id=scene_id, poses=tuple(poses), source=source)


def positions_bundle(scene_id: str, positions: np.ndarray, source: str = "synthetic") -> SceneBundle:
    poses = tuple(CameraPose(rotation=np.eye(3), position=p) for p in np.asarray(positions, dtype=np.float64))
    return SceneBundle(scene_id=scene_id, poses=poses, source=source)


def render_sphere_depth(pose: CameraPose, radius: float = 0.5,
                        center: Sequence[float] = (0.0, 0.0, 0.0)) -> np.ndarray:
    """z-depth of a sphere seen through every pixel center, 0 where the ray misses."""
    fx, fy, cx, cy = pose.intrinsics
    width, height = pose.image_size
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    rays = np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1) @ pose.rotation.T
    origin = pose.position - np.asarray(center, dtype=np.float64)
    a = np.sum(rays * rays, axis=-1)
    b = 2.0 * rays @ origin
    c = origin @ origin - radius ** 2
    disc = b * b - 4 * a * c
    hit = disc >= 0
    s = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2 * a), 0.0)
    return np.where(hit & (s > 0), s, 0.0)


def sphere_views(n_views: int = 24, distance: float = 2.0, elevations_deg: Sequence[float] = (30.0, -30.0)) -> List[CameraPose]:
    per_ring = n_views // len(elevations_deg)
    poses = []
    for elevation in elevations_deg:
        for i in range(per_ring):
            azimuth = 2 * math.pi * i / per_ring
            el = math.radians(elevation)
            position = distance * np.array([math.cos(el) * math.cos(azimuth), math.cos(el) * math.sin(azimuth), math.sin(el)])
            poses.append(CameraPose(rotation=look_at(position, np.zeros(3)), position=position,
                                    intrinsics=SPHERE_INTRINSICS, image_size=SPHERE_IMAGE))
    return poses


def sphere_frames(n_views: int = 24, radius: float = 0.5) -> List[DepthFrame]:
    return [DepthFrame(depth=render_sphere_depth(p, radius), pose=p, frame_id=i)
            for i, p in enumerate(sphere_views(n_views))]


def plane_frame(depth: float = 2.0, image_size: ImageSize = ImageSize(64, 48),
                intrinsics: Intrinsics = Intrinsics(60.0, 60.0, 32.0, 24.0)) -> DepthFrame:
    """Identity camera facing a fronto-parallel plane at z = depth."""
    pose = CameraPose.identity(intrinsics=intrinsics, image_size=image_size)
    return DepthFrame(depth=np.full((image_size.height, image_size.width), depth), pose=pose)


def analytic_sphere_volume(radius: float = 0.5, voxel_size: float = 0.02, dims: Tuple[int, int, int] = (64, 64, 64),
                           origin: Sequence[float] = (-0.63, -0.63, -0.63)) -> TsdfVolume:
    """Truncated signed distance of a sphere written straight into a fully observed grid."""
    volume = TsdfVolume.empty(origin, voxel_size, dims)
    distance = np.linalg.norm(volume.voxel_centers(), axis=1) - radius
    tsdf = np.clip(distance / volume.truncation, -1.0, 1.0).reshape(volume.dims)
    return TsdfVolume(volume.origin, voxel_size, volume.dims, volume.truncation, tsdf, np.ones(volume.dims))


def analytic_plane_volume(height: float, voxel_size: float = 0.05, dims: Tuple[int, int, int] = (16, 16, 16),
                          origin: Sequence[float] = (0.0, 0.0, 0.0)) -> TsdfVolume:
    """Half-space z < height as solid."""
    volume = TsdfVolume.empty(origin, voxel_size, dims)
    distance = volume.voxel_centers()[:, 2] - height
    tsdf = np.clip(distance / volume.truncation, -1.0, 1.0).reshape(volume.dims)
    return TsdfVolume(volume.origin, voxel_size, volume.dims, volume.truncation, tsdf, np.ones(volume.dims))


def moving_square_flow(size: int = 40, square: int = 18, velocity: Tuple[float, float] = (3.0, 4.0),
                       offset: int = 4, frame_index: int = 0) -> Tuple[FlowField, MaskFrame]:
    """Still background with one square moving coherently; returns the flow and the square's mask."""
    u = np.zeros((size, size))
    v = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=bool)
    mask[offset:offset + square, offset:offset + square] = True
    u[mask], v[mask] = velocity
    return FlowField(u, v, frame_index), MaskFrame(mask, frame_index)


def pan_flow(size: int = 40, velocity: Tuple[float, float] = (2.0, 0.0), frame_index: int = 0) -> FlowField:
    return FlowField(np.full((size, size), velocity[0]), np.full((size, size), velocity[1]), frame_index)


def random_latent(shape: Tuple[int, int, int, int], rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal(shape)


def random_image(rng: np.random.Generator, height: int = 16, width: int = 16) -> np.ndarray:
    return rng.random((height, width, 3))


def checkerboard(height: int = 16, width: int = 16, cell: int = 2, low: float = 0.0, high: float = 1.0,
                 phase: Optional[int] = 0) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    board = ((yy // cell + xx // cell + phase) % 2).astype(np.float64)
    return np.repeat((low + (high - low) * board)[:, :, None], 3, axis=2)
