import sys
import json
import math
import hashlib
import logging
from enum import Enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation
from sklearn.neighbors import KDTree

from src.curation.camera_geometry import CameraPose
from src.curation.pose_io import pose_from_dict, pose_to_dict
from src.fusion.volumetric_fusion import OccupancyGrid
from src.utils.errors import DegenerateOrbit, IdenticalPoses, InvalidSpec

logger = logging.getLogger(__name__)

WORLD_UP = np.array([0.0, 0.0, 1.0])
IDENTICAL_TOL = 1e-9
NO_OBSTACLE_CLEARANCE = sys.float_info.max


class MotionKind(str, Enum):
    TRANS_X_POS = "TRANS_X_POS"
    TRANS_X_NEG = "TRANS_X_NEG"
    TRANS_Y_POS = "TRANS_Y_POS"
    TRANS_Y_NEG = "TRANS_Y_NEG"
    TRANS_Z_POS = "TRANS_Z_POS"
    TRANS_Z_NEG = "TRANS_Z_NEG"
    ROT_YAW_POS = "ROT_YAW_POS"
    ROT_YAW_NEG = "ROT_YAW_NEG"
    ROT_PITCH_POS = "ROT_PITCH_POS"
    ROT_PITCH_NEG = "ROT_PITCH_NEG"
    ROT_ROLL_POS = "ROT_ROLL_POS"
    ROT_ROLL_NEG = "ROT_ROLL_NEG"
    ORBIT = "ORBIT"


# kind -> (camera-local axis, sign); yaw turns about the camera y axis, pitch about x, roll about z
_TRANSLATIONS = {
    MotionKind.TRANS_X_POS: (0, 1.0), MotionKind.TRANS_X_NEG: (0, -1.0),
    MotionKind.TRANS_Y_POS: (1, 1.0), MotionKind.TRANS_Y_NEG: (1, -1.0),
    MotionKind.TRANS_Z_POS: (2, 1.0), MotionKind.TRANS_Z_NEG: (2, -1.0),
}
_ROTATIONS = {
    MotionKind.ROT_PITCH_POS: (0, 1.0), MotionKind.ROT_PITCH_NEG: (0, -1.0),
    MotionKind.ROT_YAW_POS: (1, 1.0), MotionKind.ROT_YAW_NEG: (1, -1.0),
    MotionKind.ROT_ROLL_POS: (2, 1.0), MotionKind.ROT_ROLL_NEG: (2, -1.0),
}


@dataclass(frozen=True)
class MotionPrimitive:
    kind: MotionKind
    magnitude: float

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", MotionKind(self.kind))
        except ValueError as e:
            raise InvalidSpec(f"unknown motion primitive {self.kind!r}") from e
        if not (math.isfinite(self.magnitude) and self.magnitude > 0):
            raise InvalidSpec(f"{self.kind.value}: magnitude must be positive, got {self.magnitude}")


@dataclass(frozen=True)
class TrajectorySpec:
    primitives: Tuple[MotionPrimitive, ...]
    n_frames: int
    start: CameraPose
    orbit_center: Optional[Tuple[float, float, float]] = None
    orbit_radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise InvalidSpec("trajectory needs at least one primitive")
        if self.n_frames < 2:
            raise InvalidSpec(f"n_frames must be >= 2, got {self.n_frames}")
        has_orbit = any(p.kind == MotionKind.ORBIT for p in self.primitives)
        has_fields = self.orbit_center is not None and self.orbit_radius is not None
        if has_orbit and not has_fields:
            raise InvalidSpec("ORBIT primitive requires orbit_center and orbit_radius")
        if not has_orbit and (self.orbit_center is not None or self.orbit_radius is not None):
            raise InvalidSpec("orbit_center/orbit_radius given without an ORBIT primitive")
        if has_orbit and not self.orbit_radius > 0:
            raise InvalidSpec("orbit_radius must be positive")

    def to_dict(self) -> Dict:
        return {
            "primitives": [[p.kind.value, float(p.magnitude)] for p in self.primitives],
            "n_frames": int(self.n_frames),
            "start": pose_to_dict(self.start),
            "orbit_center": None if self.orbit_center is None else [float(v) for v in self.orbit_center],
            "orbit_radius": None if self.orbit_radius is None else float(self.orbit_radius),
        }


@dataclass(frozen=True)
class Trajectory:
    poses: Tuple[CameraPose, ...]
    spec_hash: str
    spec: Dict = field(default_factory=dict, compare=False)

    @property
    def positions(self) -> np.ndarray:
        return np.stack([p.position for p in self.poses])


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    first_violation_frame: Optional[int]
    min_clearance: float

    def to_dict(self) -> Dict:
        return {
            "feasible": self.feasible,
            "first_violation_frame": self.first_violation_frame,
            "min_clearance": self.min_clearance,
        }


def hash_spec(spec: Dict) -> str:
    canonical = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _axis_rotation(axis: int, angle: float) -> np.ndarray:
    rotvec = np.zeros(3)
    rotvec[axis] = angle
    return Rotation.from_rotvec(rotvec).as_matrix()


def _about_up(angle: float, up: np.ndarray = WORLD_UP) -> np.ndarray:
    return Rotation.from_rotvec(up / np.linalg.norm(up) * angle).as_matrix()


def look_at(position: np.ndarray, target: np.ndarray, up: np.ndarray = WORLD_UP) -> np.ndarray:
    """World-from-camera rotation whose optical (+z) axis points at target, image y pointing down."""
    forward = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    dist = np.linalg.norm(forward)
    if dist < 1e-12:
        raise DegenerateOrbit("camera position coincides with the look-at target")
    forward /= dist
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking straight along up: borrow the world y axis
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def _apply(primitive: MotionPrimitive, pose: CameraPose, fraction: float,
           center: Optional[np.ndarray]) -> CameraPose:
    amount = primitive.magnitude * fraction
    if primitive.kind in _TRANSLATIONS:
        axis, sign = _TRANSLATIONS[primitive.kind]
        offset = np.zeros(3)
        offset[axis] = sign * amount
        return pose.with_extrinsics(pose.rotation, pose.position + pose.rotation @ offset)
    if primitive.kind in _ROTATIONS:
        axis, sign = _ROTATIONS[primitive.kind]
        return pose.with_extrinsics(pose.rotation @ _axis_rotation(axis, sign * amount), pose.position)
    # ORBIT: rigid rotation about the vertical axis through the orbit center
    turn = _about_up(amount)
    return pose.with_extrinsics(turn @ pose.rotation, center + turn @ (pose.position - center))


def synthesize_trajectory(spec: TrajectorySpec) -> Trajectory:
    """
    Sample n_frames poses along the primitives, applied one after another.

    Each primitive gets an equal share of the frame interval. Translations
    move along the camera's own axes at constant speed, rotations turn about
    them at constant angular velocity, and ORBIT turns the camera about the
    vertical axis through orbit_center.

    Args:
        spec: Trajectory specification

    Returns:
        Trajectory whose frame 0 is spec.start
    """
    center = None if spec.orbit_center is None else np.asarray(spec.orbit_center, dtype=np.float64)
    boundaries = [spec.start]
    for primitive in spec.primitives:
        if primitive.kind == MotionKind.ORBIT:
            offset = boundaries[-1].position - center
            horizontal = np.linalg.norm(offset - (offset @ WORLD_UP) * WORLD_UP)
            if abs(horizontal - spec.orbit_radius) > 1e-6 * max(1.0, spec.orbit_radius):
                logger.warning(f"Orbit starts {horizontal:.6f} from the center, radius says {spec.orbit_radius}")
        boundaries.append(_apply(primitive, boundaries[-1], 1.0, center))

    n_prims = len(spec.primitives)
    poses = [spec.start]
    for s in np.linspace(0.0, float(n_prims), spec.n_frames)[1:]:
        k = min(int(math.floor(s)), n_prims - 1)
        poses.append(_apply(spec.primitives[k], boundaries[k], s - k, center))

    spec_dict = spec.to_dict()
    return Trajectory(poses=tuple(poses), spec_hash=hash_spec(spec_dict), spec=spec_dict)


def synthesize_orbit(center: Sequence[float], radius: float, sweep: float, start_azimuth: float,
                     n_frames: int, start: Optional[CameraPose] = None) -> Trajectory:
    """
    Cameras on a horizontal circle around center, all looking at it.

    Azimuths step uniformly from start_azimuth over sweep radians.
    """
    if n_frames < 2:
        raise InvalidSpec(f"n_frames must be >= 2, got {n_frames}")
    if not radius > 0:
        raise InvalidSpec(f"orbit radius must be positive, got {radius}")
    center = np.asarray(center, dtype=np.float64)
    template = start or CameraPose.identity()
    poses = []
    for azimuth in start_azimuth + sweep * np.arange(n_frames) / (n_frames - 1):
        position = center + radius * np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        poses.append(template.with_extrinsics(look_at(position, center), position))

    spec_dict = {"orbit": {
        "center": [float(v) for v in center],
        "radius": float(radius),
        "sweep": float(sweep),
        "start_azimuth": float(start_azimuth),
        "n_frames": int(n_frames),
        "intrinsics": [float(v) for v in template.intrinsics],
        "image_size": [int(v) for v in template.image_size],
    }}
    return Trajectory(poses=tuple(poses), spec_hash=hash_spec(spec_dict), spec=spec_dict)


def spec_from_dict(spec: Dict) -> TrajectorySpec:
    try:
        return TrajectorySpec(
            primitives=tuple(MotionPrimitive(MotionKind(k), float(m)) for k, m in spec["primitives"]),
            n_frames=int(spec["n_frames"]),
            start=pose_from_dict(spec["start"]),
            orbit_center=None if spec.get("orbit_center") is None else tuple(spec["orbit_center"]),
            orbit_radius=spec.get("orbit_radius"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidSpec(f"malformed trajectory spec: {e}") from e


def replan(spec: Dict) -> Trajectory:
    """Rebuild a trajectory from the spec recorded in a trajectory file header."""
    if "orbit" in spec:
        o = spec["orbit"]
        template = CameraPose.identity(intrinsics=tuple(o["intrinsics"]), image_size=tuple(o["image_size"]))
        return synthesize_orbit(o["center"], o["radius"], o["sweep"], o["start_azimuth"],
                                o["n_frames"], start=template)
    if "resample" in spec:
        r = spec["resample"]
        return resample_trajectory(replan(r["parent"]), r["n"])
    return synthesize_trajectory(spec_from_dict(spec))


def parse_primitives(text: str) -> Tuple[List[MotionPrimitive], Dict[str, str]]:
    """
    Parse CLI primitive lists like "trans_x_pos:1.0,orbit:3.14,frames=49".

    Returns:
        (primitives in order, options given as key=value tokens)
    """
    primitives, options = [], {}
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if "=" in token:
            key, value = token.split("=", 1)
            options[key.strip().lower()] = value.strip()
            continue
        if ":" not in token:
            raise InvalidSpec(f"primitive token {token!r} needs kind:magnitude")
        kind, magnitude = token.split(":", 1)
        try:
            primitives.append(MotionPrimitive(MotionKind(kind.strip().upper()), float(magnitude)))
        except ValueError as e:
            raise InvalidSpec(f"bad primitive token {token!r}") from e
    return primitives, options


def _orbit_score(pose_a: CameraPose, pose_b: CameraPose, tolerance: float) -> Tuple[float, float]:
    """(score, sweep angle) for 'both cameras look at a common point from equal distance'."""
    da, db = pose_a.optical_axis, pose_b.optical_axis
    w0 = pose_a.position - pose_b.position
    b = float(da @ db)
    denom = 1.0 - b * b
    if denom < 1e-12:
        return 0.0, 0.0
    d, e = float(da @ w0), float(db @ w0)
    s = (b * e - d) / denom
    u = (e - b * d) / denom
    if s <= IDENTICAL_TOL or u <= IDENTICAL_TOL:
        return 0.0, 0.0
    qa = pose_a.position + s * da
    qb = pose_b.position + u * db
    q = 0.5 * (qa + qb)
    ra = np.linalg.norm(pose_a.position - q)
    rb = np.linalg.norm(pose_b.position - q)
    residual = abs(ra - rb) / max(ra, rb) + np.linalg.norm(qa - qb) / (0.5 * (ra + rb))
    if residual > tolerance:
        return 0.0, 0.0
    va, vb = pose_a.position - q, pose_b.position - q
    cos_sweep = np.clip(va @ vb / (ra * rb), -1.0, 1.0)
    return 1.0 - float(residual), float(math.acos(cos_sweep))


def director_scores(pose_a: CameraPose, pose_b: CameraPose, scene_diagonal: float = 1.0,
                    orbit_tolerance: float = 0.05) -> Dict[MotionKind, Tuple[float, float]]:
    """
    Normalized motion components of b relative to a, keyed in enum order.

    Translations (in a's camera frame) are divided by scene_diagonal,
    rotation-vector components by pi; ORBIT scores 1 - residual of the
    common-look-at test, or 0 when it fails.

    Returns:
        kind -> (score, magnitude)
    """
    rel_rotation = pose_a.rotation.T @ pose_b.rotation
    rel_translation = pose_a.rotation.T @ (pose_b.position - pose_a.position)
    rotvec = Rotation.from_matrix(rel_rotation).as_rotvec()
    if np.linalg.norm(rel_translation) < IDENTICAL_TOL and np.linalg.norm(rotvec) < IDENTICAL_TOL:
        raise IdenticalPoses("poses do not differ")

    scores: Dict[MotionKind, Tuple[float, float]] = {}
    for kind in MotionKind:
        if kind in _TRANSLATIONS:
            axis, sign = _TRANSLATIONS[kind]
            amount = max(sign * rel_translation[axis], 0.0)
            scores[kind] = (amount / scene_diagonal, amount)
        elif kind in _ROTATIONS:
            axis, sign = _ROTATIONS[kind]
            amount = max(sign * rotvec[axis], 0.0)
            scores[kind] = (amount / math.pi, amount)
        else:
            scores[kind] = _orbit_score(pose_a, pose_b, orbit_tolerance)
    return scores


def select_director(pose_a: CameraPose, pose_b: CameraPose, scene_diagonal: float = 1.0) -> MotionPrimitive:
    """
    Choose the S-Director whose motion best explains going from a to b.

    The largest normalized component wins; ties go to the earlier enum entry.
    scene_diagonal should be at least the scene's bounding-box diagonal so
    translation scores stay below 1.
    """
    scores = director_scores(pose_a, pose_b, scene_diagonal)
    best_kind, (best_score, best_amount) = None, (-1.0, 0.0)
    for kind, (score, amount) in scores.items():
        if score > best_score:
            best_kind, best_score, best_amount = kind, score, amount
    logger.debug(f"Director scores: { {k.value: round(v[0], 6) for k, v in scores.items()} }")
    return MotionPrimitive(best_kind, best_amount)


def _sample_path(positions: np.ndarray, step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Points every <= step along the polyline; points between frames i and i+1 belong to frame i+1."""
    samples, frames = [positions[0]], [0]
    for i in range(len(positions) - 1):
        segment = positions[i + 1] - positions[i]
        count = max(1, int(math.ceil(np.linalg.norm(segment) / step)))
        for j in range(1, count + 1):
            samples.append(positions[i] + segment * (j / count))
            frames.append(i + 1)
    return np.array(samples), np.array(frames)


def check_feasible(traj: Trajectory, occupancy: OccupancyGrid, margin: float) -> FeasibilityReport:
    """
    Verify the camera path stays in free space with at least margin clearance.

    Every pose and every voxel-size step between poses is tested. Positions
    outside the grid count as free. Clearance is the distance to the nearest
    occupied voxel center.
    """
    samples, frames = _sample_path(traj.positions, occupancy.voxel_size)
    centers = occupancy.occupied_centers()
    inside_occupied = occupancy.is_occupied(samples)
    if len(centers) == 0:
        clearance = np.full(len(samples), NO_OBSTACLE_CLEARANCE)
    else:
        clearance, _ = KDTree(centers).query(samples, k=1)
        clearance = clearance[:, 0]

    violations = np.flatnonzero(inside_occupied | (clearance < margin))
    min_clearance = float(clearance.min())
    if len(violations) == 0:
        return FeasibilityReport(True, None, min_clearance)
    first = int(frames[violations[0]])
    logger.info(f"Trajectory infeasible from frame {first} (min clearance {min_clearance:.4f})")
    return FeasibilityReport(False, first, min_clearance)


def _se3_log(rotation: np.ndarray, translation: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    omega = Rotation.from_matrix(rotation).as_rotvec()
    theta = np.linalg.norm(omega)
    if theta < 1e-10:
        return omega, translation.copy()
    w = _hat(omega)
    a = math.sin(theta) / theta
    b = (1 - math.cos(theta)) / theta ** 2
    v_inv = np.eye(3) - 0.5 * w + (1 - a / (2 * b)) / theta ** 2 * (w @ w)
    return omega, v_inv @ translation


def _se3_exp(omega: np.ndarray, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.linalg.norm(omega)
    rotation = Rotation.from_rotvec(omega).as_matrix()
    if theta < 1e-10:
        return rotation, u.copy()
    w = _hat(omega)
    v = (np.eye(3) + (1 - math.cos(theta)) / theta ** 2 * w
         + (theta - math.sin(theta)) / theta ** 3 * (w @ w))
    return rotation, v @ u


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _interpolate(a: CameraPose, b: CameraPose, fraction: float) -> CameraPose:
    """Constant-twist (screw) interpolation: slerp on rotation, arcs stay arcs."""
    rel_rotation = a.rotation.T @ b.rotation
    rel_translation = a.rotation.T @ (b.position - a.position)
    omega, u = _se3_log(rel_rotation, rel_translation)
    rotation, translation = _se3_exp(fraction * omega, fraction * u)
    return a.with_extrinsics(a.rotation @ rotation, a.position + a.rotation @ translation)


def resample_trajectory(traj: Trajectory, n: int) -> Trajectory:
    """
    Resample to n poses evenly spaced in path length.

    Path length adds the rotation angle between poses (radians) to the
    distance travelled, so turning in place still gets samples. Endpoints
    are kept exactly. Between original poses the motion follows the
    screw motion joining them, so rotations are slerped and circular paths
    stay on their circle.
    """
    if n < 2:
        raise InvalidSpec(f"cannot resample to {n} poses")
    if len(traj.poses) < 2:
        raise InvalidSpec("cannot resample a trajectory with fewer than 2 poses")
    positions = traj.positions
    rotations = np.stack([p.rotation for p in traj.poses])
    turns = Rotation.from_matrix(np.einsum("nji,njk->nik", rotations[:-1], rotations[1:])).magnitude()
    lengths = np.linalg.norm(np.diff(positions, axis=0), axis=1) + turns
    knots = np.concatenate([[0.0], np.cumsum(lengths)])
    total = knots[-1]
    if total <= 0:
        # all poses identical: spread by index
        knots = np.arange(len(positions), dtype=np.float64)
        total = knots[-1]

    poses = [traj.poses[0]]
    for target in total * np.arange(1, n - 1) / (n - 1):
        i = int(np.clip(np.searchsorted(knots, target, side="right") - 1, 0, len(knots) - 2))
        span = knots[i + 1] - knots[i]
        fraction = 0.0 if span <= 0 else (target - knots[i]) / span
        poses.append(_interpolate(traj.poses[i], traj.poses[i + 1], fraction))
    poses.append(traj.poses[-1])

    spec_dict = {"resample": {"parent": traj.spec, "n": int(n)}}
    return Trajectory(poses=tuple(poses), spec_hash=hash_spec(spec_dict), spec=spec_dict)


def select_training_frames(n_total: int, n_select: int) -> List[int]:
    """Evenly spaced frame indices including the first and last frame."""
    if n_total < 1 or n_select < 1:
        raise InvalidSpec("frame counts must be positive")
    if n_select >= n_total:
        return list(range(n_total))
    if n_select == 1:
        return [0]
    return [int(i) for i in np.round(np.linspace(0, n_total - 1, n_select))]
