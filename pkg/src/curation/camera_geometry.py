import math
import logging
from enum import Enum
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import DForgeError, DegenerateFrame, EmptyScene, InvalidPose, InvalidRange
from src.utils.parallel import ordered_map

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-9
# Relative tolerance under which two singular values are treated as equal.
SINGULAR_TIE_TOL = 1e-9


class Intrinsics(NamedTuple):
    fx: float
    fy: float
    cx: float
    cy: float


class ImageSize(NamedTuple):
    width: int
    height: int


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraPose:
    """
    Camera extrinsics and pinhole intrinsics.

    rotation is world-from-camera (columns are the camera x-right, y-down,
    z-forward axes expressed in world coordinates); position is the camera
    center in world units.
    """
    rotation: np.ndarray
    position: np.ndarray
    intrinsics: Intrinsics = Intrinsics(400.0, 400.0, 240.0, 160.0)
    image_size: ImageSize = ImageSize(480, 320)

    def __post_init__(self):
        rotation = _frozen(self.rotation)
        position = _frozen(self.position)
        if rotation.shape != (3, 3) or position.shape != (3,):
            raise InvalidPose(f"rotation must be 3x3 and position 3-vector, got {rotation.shape} / {position.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(position))):
            raise InvalidPose("pose contains non-finite values")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHO_TOL:
            raise InvalidPose("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHO_TOL:
            raise InvalidPose("rotation determinant is not +1")
        intrinsics = Intrinsics(*(float(v) for v in self.intrinsics))
        image_size = ImageSize(*(int(v) for v in self.image_size))
        if image_size.width <= 0 or image_size.height <= 0:
            raise InvalidPose(f"image size must be positive, got {image_size}")
        if intrinsics.fx <= 0 or intrinsics.fy <= 0:
            raise InvalidPose("focal lengths must be positive")
        if not (0 <= intrinsics.cx < image_size.width and 0 <= intrinsics.cy < image_size.height):
            raise InvalidPose("principal point outside the image")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "intrinsics", intrinsics)
        object.__setattr__(self, "image_size", image_size)

    @classmethod
    def identity(cls, **kwargs) -> "CameraPose":
        return cls(rotation=np.eye(3), position=np.zeros(3), **kwargs)

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def with_extrinsics(self, rotation: np.ndarray, position: np.ndarray) -> "CameraPose":
        return CameraPose(rotation=rotation, position=position,
                          intrinsics=self.intrinsics, image_size=self.image_size)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points into camera coordinates."""
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation


@dataclass(frozen=True)
class SceneBundle:
    scene_id: str
    poses: Tuple[CameraPose, ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))

    def positions(self) -> np.ndarray:
        if not self.poses:
            raise EmptyScene(f"scene {self.scene_id!r} has no cameras")
        return np.stack([p.position for p in self.poses])


@dataclass(frozen=True)
class PrincipalFrame:
    center: np.ndarray
    axes: np.ndarray      # rows are principal axes
    extents: np.ndarray


class DistributionClass(str, Enum):
    SURROUND_360 = "SURROUND_360"
    ARC = "ARC"
    LINEAR = "LINEAR"


@dataclass(frozen=True)
class FilterPolicy:
    max_xy_aspect_ratio: float = 2.0
    min_angular_span_deg: float = 300.0
    arc_span_deg: float = 90.0
    distance_weight: float = 1.0
    director_family: DistributionClass = DistributionClass.SURROUND_360

    def __post_init__(self):
        values = (self.max_xy_aspect_ratio, self.min_angular_span_deg, self.arc_span_deg)
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise InvalidRange("filter thresholds must be finite and positive")
        if self.max_xy_aspect_ratio <= 1:
            raise InvalidRange("max_xy_aspect_ratio must exceed 1")
        if not (math.isfinite(self.distance_weight) and self.distance_weight >= 0):
            raise InvalidRange("distance_weight must be finite and non-negative")
        object.__setattr__(self, "director_family", DistributionClass(self.director_family))


@dataclass(frozen=True)
class FilterReport:
    scene_id: str
    distribution_class: Optional[DistributionClass]
    aspect_ok: bool
    distance_score: float
    accepted: bool
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "distribution_class": self.distribution_class.value if self.distribution_class else None,
            "aspect_ok": self.aspect_ok,
            "distance_score": self.distance_score,
            "accepted": self.accepted,
            "error": self.error,
        }


def _positions(poses: Sequence[CameraPose]) -> np.ndarray:
    if len(poses) == 0:
        raise EmptyScene("no cameras given")
    return np.stack([p.position for p in poses])


def _sign_normalize(axis: np.ndarray) -> np.ndarray:
    # largest-magnitude component positive; first index wins ties
    return axis if axis[int(np.argmax(np.abs(axis)))] >= 0 else -axis


def _subspace_basis(spanning: np.ndarray, k: int) -> np.ndarray:
    """
    Deterministic orthonormal basis of a k-dim subspace given any spanning rows.

    World axes are projected into the subspace and orthonormalized in order of
    decreasing projection length, so symmetric camera sets land on world axes.
    """
    projector = spanning.T @ spanning
    projected = projector @ np.eye(3)
    lengths = np.linalg.norm(projected, axis=0)
    order = sorted(range(3), key=lambda i: (-round(lengths[i], 12), i))
    basis: List[np.ndarray] = []
    for i in order:
        v = projected[:, i].copy()
        for b in basis:
            v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            basis.append(v / norm)
        if len(basis) == k:
            break
    return np.array(basis)


def compute_center(poses: Sequence[CameraPose]) -> np.ndarray:
    """Arithmetic mean of camera positions."""
    return _positions(poses).mean(axis=0)


def compute_principal_frame(poses: Sequence[CameraPose]) -> PrincipalFrame:
    """
    Scene center, principal axes and per-axis extents of the camera positions.

    Axes come from the SVD of the centered position matrix. Groups of equal
    singular values (including the zero group of collinear / coplanar sets)
    get a deterministic basis, every axis is sign-normalized, and the rows are
    ordered by descending extent.

    Args:
        poses: Camera poses of one scene

    Returns:
        PrincipalFrame with center, axes (rows) and extents
    """
    positions = _positions(poses)
    center = positions.mean(axis=0)
    centered = positions - center

    _, singular, vt = np.linalg.svd(centered, full_matrices=True)
    singular = np.concatenate([singular, np.zeros(3 - len(singular))])
    scale = max(float(singular[0]), 1e-300)
    tol = SINGULAR_TIE_TOL * scale if singular[0] > 0 else 0.0

    rows: List[np.ndarray] = []
    row_sv: List[float] = []
    i = 0
    while i < 3:
        j = i + 1
        while j < 3 and abs(singular[j] - singular[i]) <= tol:
            j += 1
        if singular[i] <= tol:
            break  # remaining directions are degenerate
        group = vt[i:j]
        if j - i == 1:
            rows.append(group[0])
        else:
            rows.extend(_subspace_basis(group, j - i))
        row_sv.extend([float(singular[i])] * (j - i))
        i = j

    n_proper = len(rows)
    if n_proper == 2:
        rows.append(np.cross(rows[0], rows[1]))
    elif n_proper < 2:
        # collinear or single-camera sets: the null space basis comes from world axes
        rows.extend(_subspace_basis(vt[n_proper:], 3 - n_proper))
    row_sv.extend([0.0] * (3 - n_proper))

    axes = np.array([_sign_normalize(r) for r in rows])
    projections = centered @ axes.T
    extents = projections.max(axis=0) - projections.min(axis=0)

    order = sorted(range(3), key=lambda k: (-extents[k], -row_sv[k], k))
    axes = axes[order]
    extents = extents[order]
    logger.debug(f"Principal frame: center={center}, extents={extents}")
    return PrincipalFrame(center=_frozen(center), axes=_frozen(axes), extents=_frozen(extents))


def angular_span_deg(azimuths: np.ndarray) -> float:
    """Smallest arc (degrees) covering all azimuths: 360 minus the largest circular gap."""
    if len(azimuths) == 0:
        return 0.0
    a = np.sort(np.mod(azimuths, 2 * np.pi))
    gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
    return float(np.degrees(2 * np.pi - gaps.max()))


def classify_distribution(bundle: SceneBundle, frame: PrincipalFrame, policy: FilterPolicy) -> DistributionClass:
    """
    Rule 1: how far the cameras capture around the scene.

    Viewing directions are projected onto the plane of the two dominant axes
    and the azimuth span of those projections is compared with the policy
    thresholds. Cameras looking along the plane normal carry no azimuth.
    """
    if frame.extents[0] == 0 and frame.extents[1] == 0:
        raise DegenerateFrame(f"scene {bundle.scene_id!r}: both dominant extents are zero")
    directions = np.stack([p.optical_axis for p in bundle.poses]) @ frame.axes[:2].T
    keep = np.linalg.norm(directions, axis=1) > 1e-9
    span = angular_span_deg(np.arctan2(directions[keep, 1], directions[keep, 0]))
    if span >= policy.min_angular_span_deg:
        return DistributionClass.SURROUND_360
    if span >= policy.arc_span_deg:
        return DistributionClass.ARC
    return DistributionClass.LINEAR


def aspect_ratio_check(frame: PrincipalFrame, policy: FilterPolicy) -> bool:
    """Rule 2: the two dominant extents should not differ too much."""
    lx, ly = float(frame.extents[0]), float(frame.extents[1])
    if lx == 0 or ly == 0:
        return False
    return max(lx / ly, ly / lx) <= policy.max_xy_aspect_ratio


def distance_score(bundle: SceneBundle, frame: PrincipalFrame,
                   box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> float:
    """
    Rule 3: summed distance from each camera to the nearest face plane of the box.

    The box is axis-aligned in the principal frame. By default it is the box
    spanned by the cameras; axes with zero extent carry no faces.

    Args:
        bundle: Scene cameras
        frame: Principal frame of the scene
        box: Optional (lo, hi) corners in principal-frame coordinates

    Returns:
        Sum of per-camera distances (lower is better)
    """
    coords = (bundle.positions() - frame.center) @ frame.axes.T
    if box is None:
        lo, hi = coords.min(axis=0), coords.max(axis=0)
    else:
        lo, hi = np.asarray(box[0], dtype=np.float64), np.asarray(box[1], dtype=np.float64)
    proper = (hi - lo) > 0
    if not np.any(proper):
        raise DegenerateFrame(f"scene {bundle.scene_id!r}: bounding box has no faces")
    to_faces = np.minimum(np.abs(coords - lo), np.abs(hi - coords))[:, proper]
    return float(to_faces.min(axis=1).sum())


def evaluate_scene(bundle: SceneBundle, policy: FilterPolicy) -> FilterReport:
    """Apply all three rules to one scene; failures end up in the report."""
    try:
        frame = compute_principal_frame(bundle.poses)
        distribution = classify_distribution(bundle, frame, policy)
        aspect_ok = aspect_ratio_check(frame, policy)
        score = policy.distance_weight * distance_score(bundle, frame)
    except DForgeError as e:
        logger.warning(f"Scene {bundle.scene_id} rejected: {e}")
        return FilterReport(bundle.scene_id, None, False, 0.0, False, error=f"{type(e).__name__}: {e}")
    accepted = aspect_ok and distribution == policy.director_family
    return FilterReport(bundle.scene_id, distribution, aspect_ok, score, accepted)


def _rank_key(report: FilterReport):
    return (not report.accepted, report.error is not None, report.distance_score, report.scene_id)


def filter_scenes(bundles: Sequence[SceneBundle], policy: FilterPolicy) -> List[FilterReport]:
    """
    Evaluate every scene and rank the reports.

    Accepted scenes come first by ascending distance score, then rejected
    scenes, then scenes that failed; scene_id breaks ties, so the ranking does
    not depend on input order.
    """
    reports = ordered_map(lambda b: evaluate_scene(b, policy), bundles)
    ranked = sorted(reports, key=_rank_key)
    logger.info(f"Filtered {len(ranked)} scenes: {sum(r.accepted for r in ranked)} accepted")
    return ranked
