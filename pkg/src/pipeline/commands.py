import os
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.curation.camera_geometry import (CameraPose, DistributionClass, FilterPolicy, aspect_ratio_check,
                                          classify_distribution, compute_principal_frame, distance_score,
                                          filter_scenes)
from src.curation.flow_filter import (ReferenceWeights, TemporalPolicy, is_temporal_variant, reference_scores,
                                      select_reference_frame, sequence_stats)
from src.curation.flow_io import discover_videos, mask_dir_for, read_flow_sequence, read_mask_sequence
from src.curation.pose_io import iter_scenes, pose_from_dict
from src.diffusion.denoisers import build_denoiser
from src.diffusion.diffusion_orchestrator import (ConditionPack, LatentVideo, RefinementConfig, make_schedule,
                                                  make_timesteps, q_sample, refine_appearance, sample,
                                                  switch_once_schedule)
from src.diffusion.identity_preserving import demo_temporal_inputs, generate_4d
from src.diffusion.latent_io import read_latent, write_latent
from src.fusion.depth_io import read_depth_directory
from src.fusion.volume_io import read_occupancy, write_mesh_ply, write_occupancy, write_volume
from src.fusion.volumetric_fusion import TsdfVolume, extract_mesh, fuse_frames, to_occupancy
from src.losses.image_io import read_confidence, read_image
from src.losses.recon_loss import (ConfidenceMap, ConstantPerceptual, LossWeights, confidence_weighted_loss,
                                   dynamic_scene_loss)
from src.planning.trajectory_io import read_trajectory, write_trajectory
from src.planning.trajectory_planner import (MotionKind, TrajectorySpec, check_feasible, director_scores, look_at,
                                             parse_primitives, replan, resample_trajectory, select_director,
                                             select_training_frames, synthesize_trajectory)
from src.utils.config import PipelineConfig
from src.utils.errors import AllZero, DForgeError, FormatError, InvalidSpec
from src.utils.parallel import ordered_map
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2
EXIT_INFEASIBLE = 3


@dataclass
class CommandResult:
    exit_code: int
    report: Any
    outputs: List[str] = field(default_factory=list)
    inputs: List[str] = field(default_factory=list)


def _write_jsonl(path: str, records: List[Dict]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    return path


def _write_json(path: str, record: Any) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)
        f.write("\n")
    return path


def _floats(array) -> List:
    return np.asarray(array, dtype=np.float64).tolist()


def filter_policy(config: PipelineConfig) -> FilterPolicy:
    section = config.filter
    return FilterPolicy(max_xy_aspect_ratio=section.max_xy_aspect_ratio,
                        min_angular_span_deg=section.min_angular_span_deg,
                        arc_span_deg=section.arc_span_deg,
                        distance_weight=section.distance_weight,
                        director_family=DistributionClass(section.director_family))


def cmd_analyze(args, config: PipelineConfig) -> CommandResult:
    """Principal frame, distribution class and rule scores per scene of a pose manifest."""
    policy = filter_policy(config)
    records, failures = [], 0
    for line_no, item in iter_scenes(args.manifest):
        if isinstance(item, DForgeError):
            failures += 1
            records.append({"line": line_no, "error": f"{type(item).__name__}: {item}"})
            continue
        try:
            frame = compute_principal_frame(item.poses)
            record = {
                "scene_id": item.scene_id,
                "n_cameras": len(item.poses),
                "center": _floats(frame.center),
                "axes": _floats(frame.axes),
                "extents": _floats(frame.extents),
                "distribution_class": classify_distribution(item, frame, policy).value,
                "aspect_ok": aspect_ratio_check(frame, policy),
                "distance_score": distance_score(item, frame),
            }
        except DForgeError as e:
            failures += 1
            logger.warning(f"{args.manifest}:{line_no}: scene {item.scene_id} failed ({e})")
            record = {"line": line_no, "scene_id": item.scene_id, "error": f"{type(e).__name__}: {e}"}
        records.append(record)

    out = _write_jsonl(os.path.join(args.out, "analyze.jsonl"), records)
    logger.info(f"Analyzed {len(records)} scenes, {failures} skipped")
    return CommandResult(EXIT_PARTIAL if failures else EXIT_OK, records, [out], [args.manifest])


def cmd_filter(args, config: PipelineConfig) -> CommandResult:
    bundles, failures = [], 0
    for line_no, item in iter_scenes(args.manifest):
        if isinstance(item, DForgeError):
            failures += 1
        else:
            bundles.append(item)
    reports = filter_scenes(bundles, filter_policy(config))
    records = [r.to_dict() for r in reports]
    failures += sum(1 for r in reports if r.error)
    out = _write_jsonl(os.path.join(args.out, "filter.jsonl"), records)
    return CommandResult(EXIT_PARTIAL if failures else EXIT_OK, records, [out], [args.manifest])


def _parse_vector(text: Optional[str], name: str) -> Optional[np.ndarray]:
    if text is None:
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise InvalidSpec(f"{name}: cannot parse {text!r}") from e
    if len(values) != 3:
        raise InvalidSpec(f"{name}: expected 3 values, got {len(values)}")
    return np.array(values)


def _start_pose(args, center: Optional[np.ndarray], radius: float) -> CameraPose:
    if args.start:
        return _read_pose(args.start)
    if center is not None:
        position = center + np.array([radius, 0.0, 0.0])
        return CameraPose(rotation=look_at(position, center), position=position)
    return CameraPose.identity()


def cmd_plan(args, config: PipelineConfig) -> CommandResult:
    """Synthesize (or re-plan) a trajectory and check it against an occupancy grid when given."""
    inputs = [p for p in (args.start, args.occupancy, args.replan) if p]
    if args.replan:
        traj = replan(read_trajectory(args.replan).spec)
    else:
        if not args.primitives:
            raise InvalidSpec("plan needs a primitive list or --replan")
        primitives, options = parse_primitives(args.primitives)
        try:
            n_frames = int(options.pop("frames", config.plan.n_frames))
            radius = float(options.pop("radius", args.orbit_radius or config.plan.orbit_radius))
        except ValueError as e:
            raise InvalidSpec(f"bad plan option: {e}") from e
        if options:
            raise InvalidSpec(f"unknown plan options: {sorted(options)}")
        has_orbit = any(p.kind == MotionKind.ORBIT for p in primitives)
        center = _parse_vector(args.orbit_center, "--orbit-center")
        if has_orbit and center is None:
            center = np.zeros(3)
        spec = TrajectorySpec(
            primitives=tuple(primitives),
            n_frames=n_frames,
            start=_start_pose(args, center if has_orbit else None, radius),
            orbit_center=tuple(center) if has_orbit else None,
            orbit_radius=radius if has_orbit else None,
        )
        traj = synthesize_trajectory(spec)
    if args.resample:
        traj = resample_trajectory(traj, args.resample)

    out = write_trajectory(os.path.join(args.out, "trajectory.jsonl"), traj)
    report = {
        "n_frames": len(traj.poses),
        "spec_hash": traj.spec_hash,
        "training_frames": select_training_frames(len(traj.poses), min(len(traj.poses), config.plan.n_frames)),
    }
    exit_code = EXIT_OK
    if args.occupancy:
        feasibility = check_feasible(traj, read_occupancy(args.occupancy), config.plan.margin)
        report["feasibility"] = feasibility.to_dict()
        if not feasibility.feasible:
            logger.warning(f"Trajectory collides at frame {feasibility.first_violation_frame}")
            exit_code = EXIT_INFEASIBLE
    return CommandResult(exit_code, report, [out], inputs)


def _read_pose(path: str) -> CameraPose:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except (OSError, ValueError) as e:
        raise FormatError(f"{path}: unreadable pose file ({e})") from e
    return pose_from_dict(record)


def cmd_director(args, config: PipelineConfig) -> CommandResult:
    """Adaptive S-Director choice for going from pose A to pose B, with the full score table."""
    pose_a, pose_b = _read_pose(args.pose_a), _read_pose(args.pose_b)
    diagonal = config.plan.scene_diagonal
    chosen = select_director(pose_a, pose_b, diagonal)
    report = {
        "director": chosen.kind.value,
        "magnitude": chosen.magnitude,
        "scene_diagonal": diagonal,
        "scores": {kind.value: score for kind, (score, _) in director_scores(pose_a, pose_b, diagonal).items()},
    }
    out = _write_json(os.path.join(args.out, "director.json"), report)
    return CommandResult(EXIT_OK, report, [out], [args.pose_a, args.pose_b])


def cmd_fuse(args, config: PipelineConfig) -> CommandResult:
    """Fuse a depth directory into TSDF volume, mesh and occupancy files."""
    tsdf = config.tsdf
    volume = TsdfVolume.empty(tsdf.origin, tsdf.voxel_size, tsdf.dims,
                              truncation=tsdf.truncation_voxels * tsdf.voxel_size, max_weight=tsdf.max_weight)
    volume = fuse_frames(volume, read_depth_directory(args.depth_dir))
    mesh = extract_mesh(volume)
    occupancy = to_occupancy(volume, tsdf.occupancy_band)

    outputs = [
        write_volume(os.path.join(args.out, "volume.tsdf"), volume),
        write_mesh_ply(os.path.join(args.out, "mesh.ply"), mesh),
        write_occupancy(os.path.join(args.out, "occupancy.occg"), occupancy),
    ]
    report = {
        "observed_voxels": int(volume.observed.sum()),
        "occupied_voxels": int(occupancy.occupied.sum()),
        "vertices": len(mesh.vertices),
        "triangles": len(mesh.triangles),
    }
    return CommandResult(EXIT_OK, report, outputs, [args.depth_dir])


def _video_verdict(video_id: str, directory: str, mask_dir: Optional[str], config: PipelineConfig) -> Dict:
    flow = config.flow
    try:
        flows = read_flow_sequence(directory)
        stats = sequence_stats(flows, flow.eps_static, flow.eps_dyn)
        accepted, score = is_temporal_variant(stats, TemporalPolicy(flow.min_static, flow.min_dynamic,
                                                                    flow.max_uniformity))
        verdict = {"video_id": video_id, "n_frames": len(flows), "accepted": accepted, "score": score,
                   "frames": [s.to_dict() for s in stats]}
        if mask_dir:
            masks = read_mask_sequence(mask_dir)
            weights = ReferenceWeights(flow.w_mask, flow.w_flow)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AllZero)
                verdict["reference_frame"] = select_reference_frame(masks, flows, weights)
        return verdict
    except DForgeError as e:
        logger.warning(f"Video {video_id} skipped: {e}")
        return {"video_id": video_id, "error": f"{type(e).__name__}: {e}"}


def cmd_flowstats(args, config: PipelineConfig) -> CommandResult:
    videos = discover_videos(args.flow_dir)
    single = len(videos) == 1 and os.path.normpath(videos[0][1]) == os.path.normpath(args.flow_dir)
    verdicts = ordered_map(lambda item: _video_verdict(item[0], item[1],
                                                       mask_dir_for(args.mask_dir, item[0], single), config),
                           videos, max_workers=config.run.threads)
    failures = sum(1 for v in verdicts if "error" in v)
    out = _write_jsonl(os.path.join(args.out, "flowstats.jsonl"), verdicts)
    inputs = [args.flow_dir] + ([args.mask_dir] if args.mask_dir else [])
    return CommandResult(EXIT_PARTIAL if failures else EXIT_OK, verdicts, [out], inputs)


def cmd_pickref(args, config: PipelineConfig) -> CommandResult:
    flows = read_flow_sequence(args.flow_dir)
    masks = read_mask_sequence(args.mask_dir)
    weights = ReferenceWeights(config.flow.w_mask, config.flow.w_flow)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", AllZero)
        index = select_reference_frame(masks, flows, weights)
    report = {
        "reference_frame": index,
        "scores": _floats(reference_scores(masks, flows, weights)),
        "all_zero": any(issubclass(w.category, AllZero) for w in caught),
    }
    out = _write_json(os.path.join(args.out, "pickref.json"), report)
    return CommandResult(EXIT_OK, report, [out], [args.flow_dir, args.mask_dir])


def cmd_simulate(args, config: PipelineConfig) -> CommandResult:
    """Mock-denoiser sampling run; every parameter needed for replay lands in the report."""
    sampler = config.sampler
    seed = config.run.seed
    mock = args.mock or sampler.mock
    switch = sampler.switch_step if args.switch is None else args.switch
    schedule = make_schedule(sampler.train_steps, sampler.beta_start, sampler.beta_end, sampler.spacing)
    timesteps = make_timesteps(sampler.train_steps, sampler.inference_steps)
    directors = switch_once_schedule(len(timesteps), switch)
    inputs = [args.z0] if args.z0 else []

    z0 = None
    if mock == "oracle":
        z0 = read_latent(args.z0) if args.z0 else LatentVideo(make_rng(seed, "z0").standard_normal(sampler.latent_shape))
    denoiser = build_denoiser(mock, schedule, sampler.mock_mu, sampler.mock_sigma, z0)
    shape = z0.shape if z0 is not None else sampler.latent_shape
    noise = LatentVideo(make_rng(seed, "simulate-noise").standard_normal(shape))
    init = q_sample(z0, timesteps[0], noise, schedule) if z0 is not None else noise
    cond = ConditionPack(text_token="mock", guidance_scale=sampler.guidance_scale)
    refine = RefinementConfig(config.refine.t0, config.refine.repeats, config.refine.mid_timestep,
                              config.refine.n_steps)

    outputs = []
    if args.mode == "4d":
        video, masks, flows = demo_temporal_inputs(sampler.latent_shape, sampler.mock_mu, seed)
        result = generate_4d(video, masks, flows, build_denoiser("anchored", schedule, sampler.mock_mu,
                                                                 sampler.mock_sigma),
                             schedule, timesteps, n_views=shape[0], lam=sampler.blend_lambda,
                             blend_window=sampler.blend_window, refine=refine, seed=seed,
                             weights=ReferenceWeights(config.flow.w_mask, config.flow.w_flow),
                             max_workers=config.run.threads)
        outputs.append(write_latent(os.path.join(args.out, "reference.latv"), result.reference_video))
        for j, camera in enumerate(result.camera_videos):
            outputs.append(write_latent(os.path.join(args.out, f"camera_{j:03d}.latv"), camera))
        extra = {"reference_frame": result.reference_frame, "n_cameras": len(result.camera_videos)}
    else:
        latent = sample(denoiser, schedule, directors, cond, init, timesteps)
        if args.mode == "refine":
            latent = refine_appearance(latent, denoiser, schedule, refine, seed)
        outputs.append(write_latent(os.path.join(args.out, "sample.latv"), latent))
        extra = {"mean": float(latent.data.mean()), "std": float(latent.data.std())}

    report = {
        "mode": args.mode,
        "mock": mock,
        "seed": seed,
        "schedule": {"T": sampler.train_steps, "beta_start": sampler.beta_start, "beta_end": sampler.beta_end,
                     "spacing": sampler.spacing},
        "timesteps": timesteps,
        "directors": directors.to_list(),
        "guidance_scale": sampler.guidance_scale,
        "blend_lambda": sampler.blend_lambda,
        "blend_window": sampler.blend_window,
        "refine": {"t0": refine.t0, "repeats": refine.repeats, "mid_timestep": refine.mid_timestep,
                   "n_steps": refine.n_steps},
        **extra,
    }
    outputs.append(_write_json(os.path.join(args.out, "simulate.json"), report))
    return CommandResult(EXIT_OK, report, outputs, inputs)


def cmd_loss(args, config: PipelineConfig) -> CommandResult:
    pred = read_image(args.pred)
    gt = read_image(args.gt)
    section = config.loss
    if args.dynamic:
        weights = LossWeights.dynamic_scene()
        breakdown = dynamic_scene_loss(pred, gt, weights, section.ssim_window, section.ssim_sigma)
    else:
        conf = read_confidence(args.conf) if args.conf else ConfidenceMap(np.ones(pred.shape[:2]))
        weights = LossWeights(section.l1, section.ssim, section.lpips, section.tv)
        perceptual = ConstantPerceptual(args.perceptual) if args.perceptual is not None else None
        breakdown = confidence_weighted_loss(pred, gt, conf, weights, perceptual,
                                             section.ssim_window, section.ssim_sigma)
    report = breakdown.to_dict()
    out = _write_json(os.path.join(args.out, "loss.json"), report)
    inputs = [p for p in (args.pred, args.gt, args.conf) if p]
    return CommandResult(EXIT_OK, report, [out], inputs)


COMMANDS = {
    "analyze": cmd_analyze,
    "filter": cmd_filter,
    "plan": cmd_plan,
    "director": cmd_director,
    "fuse": cmd_fuse,
    "flowstats": cmd_flowstats,
    "pickref": cmd_pickref,
    "simulate": cmd_simulate,
    "loss": cmd_loss,
}
