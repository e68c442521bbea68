import json
import logging

from src.curation.pose_io import pose_from_dict, pose_to_dict
from src.planning.trajectory_planner import Trajectory, hash_spec
from src.utils.errors import FormatError

logger = logging.getLogger(__name__)


def write_trajectory(path: str, traj: Trajectory) -> str:
    """Header line {spec, n_frames, spec_hash}, then one pose record per line."""
    with open(path, "w", encoding="utf-8") as f:
        header = {"spec": traj.spec, "n_frames": len(traj.poses), "spec_hash": traj.spec_hash}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for pose in traj.poses:
            f.write(json.dumps(pose_to_dict(pose), sort_keys=True) + "\n")
    logger.info(f"Wrote {len(traj.poses)} poses to {path}")
    return path


def read_trajectory(path: str) -> Trajectory:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty trajectory file")
    try:
        header = json.loads(lines[0])
        spec, n_frames, spec_hash = header["spec"], int(header["n_frames"]), header["spec_hash"]
        poses = tuple(pose_from_dict(json.loads(line)) for line in lines[1:])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed trajectory file ({e})") from e
    if len(poses) != n_frames:
        raise FormatError(f"{path}: header says {n_frames} poses, found {len(poses)}")
    if hash_spec(spec) != spec_hash:
        raise FormatError(f"{path}: spec_hash does not match the recorded spec")
    return Trajectory(poses=poses, spec_hash=spec_hash, spec=spec)
