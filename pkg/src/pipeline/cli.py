import os
import sys
import json
import time
import logging
import argparse
from typing import List, Optional

from db.logger import log_run
from src.pipeline.commands import COMMANDS, EXIT_PARTIAL, CommandResult
from src.utils.config import dump_config, load_config
from src.utils.digests import RunManifest, digest_paths
from src.utils.errors import DForgeError, FormatError

logger = logging.getLogger(__name__)


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Sectioned key = value config file')
    common.add_argument('--seed', type=int, help='Override run.seed')
    common.add_argument('--out', default='out', help='Output directory')
    common.add_argument('--format', choices=['json', 'text'], help='Report format on stdout')
    common.add_argument('--verbose', action='store_true', help='Debug logging')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog='dforge', description='Dimension-variant data curation and sampler tooling')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    analyze_parser = subparsers.add_parser('analyze', parents=[common], help='Principal frame report per scene')
    analyze_parser.add_argument('manifest', help='Line-delimited JSON pose manifest or COLMAP text model directory')

    filter_parser = subparsers.add_parser('filter', parents=[common], help='Rank scenes by the filter rules')
    filter_parser.add_argument('manifest', help='Line-delimited JSON pose manifest or COLMAP text model directory')

    plan_parser = subparsers.add_parser('plan', parents=[common], help='Synthesize a camera trajectory')
    plan_parser.add_argument('primitives', nargs='?', help='e.g. trans_x_pos:1.0,orbit:3.14,frames=49')
    plan_parser.add_argument('--start', help='JSON pose record for frame 0')
    plan_parser.add_argument('--occupancy', help='Occupancy grid (.occg) to check feasibility against')
    plan_parser.add_argument('--orbit-center', help='x,y,z of the orbit center')
    plan_parser.add_argument('--orbit-radius', type=float, help='Orbit radius')
    plan_parser.add_argument('--resample', type=int, help='Resample to this many poses')
    plan_parser.add_argument('--replan', help='Re-plan from the header of a trajectory file')

    director_parser = subparsers.add_parser('director', parents=[common], help='Pick the S-Director between two poses')
    director_parser.add_argument('pose_a', help='JSON pose record of the first view')
    director_parser.add_argument('pose_b', help='JSON pose record of the second view')

    fuse_parser = subparsers.add_parser('fuse', parents=[common], help='Fuse depth frames into a TSDF volume')
    fuse_parser.add_argument('depth_dir', help='Directory of depth frames with pose sidecars')

    flow_parser = subparsers.add_parser('flowstats', parents=[common], help='Temporal-variant verdict per video')
    flow_parser.add_argument('flow_dir', help='Flow directory (one video, or one sub-directory per video)')
    flow_parser.add_argument('--mask-dir', help='Mask PNGs (same layout as flow_dir)')

    pickref_parser = subparsers.add_parser('pickref', parents=[common], help='Choose the reference frame')
    pickref_parser.add_argument('flow_dir', help='Flow files of one video')
    pickref_parser.add_argument('mask_dir', help='Mask PNGs of the same video')

    simulate_parser = subparsers.add_parser('simulate', parents=[common], help='Mock-denoiser sampling run')
    simulate_parser.add_argument('--mode', choices=['switch', 'refine', '4d'], default='switch')
    simulate_parser.add_argument('--mock', choices=['oracle', 'gaussian', 'anchored', 'director_sensitive', 'constant'])
    simulate_parser.add_argument('--switch', type=int, help='Override sampler.switch_step')
    simulate_parser.add_argument('--z0', help='Clean latent (.latv) for the oracle mock')

    loss_parser = subparsers.add_parser('loss', parents=[common], help='Evaluate the reconstruction losses')
    loss_parser.add_argument('pred', help='Rendered image (PNG)')
    loss_parser.add_argument('gt', help='Target image (PNG)')
    loss_parser.add_argument('--conf', help='Confidence map (grayscale PNG or raw f32)')
    loss_parser.add_argument('--perceptual', type=float, help='Constant perceptual term')
    loss_parser.add_argument('--dynamic', action='store_true', help='Dynamic-scene loss instead')

    replay_parser = subparsers.add_parser('replay', parents=[common], help='Re-run a run manifest and compare outputs')
    replay_parser.add_argument('manifest', help='<command>.manifest.json of an earlier run')
    return parser


def _emit(report, fmt: str) -> None:
    if fmt == 'json':
        print(json.dumps(report, indent=2))
        return
    rows = report if isinstance(report, list) else [report]
    for row in rows:
        if isinstance(row, dict):
            print("  ".join(f"{k}={v}" for k, v in row.items() if not isinstance(v, (list, dict))))
        else:
            print(row)


def _rewrite_flag(argv: List[str], flag: str, value: str) -> List[str]:
    out, i, found = [], 0, False
    while i < len(argv):
        token = argv[i]
        if token == flag and i + 1 < len(argv):
            out.extend([flag, value])
            i += 2
            found = True
            continue
        if token.startswith(flag + "="):
            out.append(f"{flag}={value}")
            found = True
        else:
            out.append(token)
        i += 1
    return out if found else out + [flag, value]


def replay(args) -> int:
    """Re-execute a recorded run into --out and compare output digests."""
    try:
        recorded = RunManifest.load(args.manifest)
    except DForgeError as e:
        logger.error(f"Replay failed: {e}")
        return e.exit_code
    os.makedirs(args.out, exist_ok=True)
    config_path = os.path.join(args.out, "replay.conf")
    with open(config_path, "w", encoding="utf-8") as f:
        f.write(recorded.config_text)

    argv = _rewrite_flag(_rewrite_flag(list(recorded.argv), "--out", args.out), "--config", config_path)
    code = main(argv)
    replayed = RunManifest.load(os.path.join(args.out, f"{recorded.command}.manifest.json"))

    keys = sorted(set(recorded.output_digests) | set(replayed.output_digests))
    differences = [k for k in keys if recorded.output_digests.get(k) != replayed.output_digests.get(k)]
    identical = not differences and code == recorded.exit_code
    report = {"command": recorded.command, "identical": identical, "exit_code": code, "differences": differences}
    _emit(report, args.format or 'json')
    if not identical:
        logger.warning(f"Replay of {args.manifest} differs in {differences or 'exit code'}")
    return 0 if identical else EXIT_PARTIAL


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)

    if args.command == 'replay':
        return replay(args)

    try:
        config = load_config(args.config).with_seed(args.seed)
    except DForgeError as e:
        logger.error(f"Config error: {e}")
        return e.exit_code
    os.makedirs(args.out, exist_ok=True)

    started = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, config)
    except DForgeError as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        result = CommandResult(e.exit_code, {"error": f"{type(e).__name__}: {e}"})
    except (OSError, ValueError, KeyError) as e:
        err = FormatError(f"{type(e).__name__}: {e}")
        logger.error(f"{args.command} failed on its input: {err}")
        result = CommandResult(err.exit_code, {"error": f"FormatError: {err}"})
    wall_time = time.perf_counter() - started

    _emit(result.report, args.format or config.run.format)

    manifest = RunManifest(
        command=args.command,
        argv=argv,
        config_hash=config.config_hash(),
        config_text=dump_config(config),
        seed=config.run.seed,
        input_digests=digest_paths(result.inputs),
        output_digests=digest_paths(result.outputs, root=args.out),
        exit_code=result.exit_code,
        wall_time=wall_time,
    )
    manifest_path = manifest.save(os.path.join(args.out, f"{args.command}.manifest.json"))
    try:
        log_run(manifest, manifest_path)
    except Exception as e:
        logger.warning(f"Could not write the run log: {e}")
    logger.info(f"{args.command} finished with exit code {result.exit_code} in {wall_time:.2f}s")
    return result.exit_code
