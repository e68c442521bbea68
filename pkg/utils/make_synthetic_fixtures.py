#!/usr/bin/env python3
"""
Write a small synthetic input set for trying out every dforge command.
"""

import os
import sys
import logging
import argparse

import numpy as np

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.curation.flow_io import write_flo, write_mask
from src.curation.pose_io import bundle_to_line, write_colmap_model
from src.diffusion.diffusion_orchestrator import LatentVideo
from src.diffusion.latent_io import write_latent
from src.fusion.depth_io import write_depth_frame
from src.losses.image_io import write_image
from src.losses.recon_loss import ImageBuffer
from src.utils.rng import make_rng
from src.utils.synthetic import checkerboard, moving_square_flow, pan_flow, ring_bundle, sphere_frames

logger = logging.getLogger(__name__)


def write_pose_manifest(path: str) -> str:
    """Ring, arc and line scenes plus one corrupted line."""
    scenes = [
        ring_bundle("ring36", n=36),
        ring_bundle("arc120", n=12, span_deg=120.0),
        ring_bundle("line45", n=8, span_deg=45.0),
    ]
    with open(path, "w", encoding="utf-8") as f:
        for bundle in scenes:
            f.write(bundle_to_line(bundle) + "\n")
        f.write('{"scene_id": "broken", "poses": [{"rotation": [1, 0]}]}\n')
    return path


def write_colmap_models(directory: str) -> str:
    """Ring and arc scenes as COLMAP text models, one sub-directory each."""
    for bundle in (ring_bundle("ring36", n=36), ring_bundle("arc120", n=12, span_deg=120.0)):
        write_colmap_model(os.path.join(directory, bundle.scene_id), bundle)
    return directory


def write_sphere_depths(directory: str, n_views: int = 24) -> str:
    os.makedirs(directory, exist_ok=True)
    for frame in sphere_frames(n_views):
        write_depth_frame(directory, f"view_{frame.frame_id:03d}", frame, raw=True)
    return directory


def write_flow_videos(flow_root: str, mask_root: str, n_frames: int = 6) -> None:
    """One static-camera video with a moving square, one camera pan."""
    for video in ("square", "pan"):
        os.makedirs(os.path.join(flow_root, video), exist_ok=True)
        os.makedirs(os.path.join(mask_root, video), exist_ok=True)
    for k in range(n_frames):
        flow, mask = moving_square_flow(square=14 + 2 * (k % 3), velocity=(3.0 + k, 4.0), frame_index=k)
        write_flo(os.path.join(flow_root, "square", f"{k:04d}.flo"), flow)
        write_mask(os.path.join(mask_root, "square", f"{k:04d}.png"), mask)
        write_flo(os.path.join(flow_root, "pan", f"{k:04d}.flo"), pan_flow(velocity=(2.0 + 0.1 * k, 0.5), frame_index=k))
        write_mask(os.path.join(mask_root, "pan", f"{k:04d}.png"), mask)


def write_images(directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    gt = checkerboard(32, 32, cell=4, low=0.2, high=0.8)
    pred = np.clip(gt + 0.05 * make_rng(0, "fixture-image").standard_normal(gt.shape), 0.0, 1.0)
    write_image(os.path.join(directory, "gt.png"), ImageBuffer(gt))
    write_image(os.path.join(directory, "pred.png"), ImageBuffer(pred))
    conf = np.repeat(np.linspace(0.0, 1.0, 32)[None, :], 32, axis=0)
    write_image(os.path.join(directory, "conf.png"), ImageBuffer(np.repeat(conf[:, :, None], 3, axis=2)))


def write_fixtures(out_dir: str) -> dict:
    """Write every fixture under out_dir and return their paths by name."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "manifest": write_pose_manifest(os.path.join(out_dir, "scenes.jsonl")),
        "colmap": write_colmap_models(os.path.join(out_dir, "colmap")),
        "depth": write_sphere_depths(os.path.join(out_dir, "depth")),
        "flows": os.path.join(out_dir, "flows"),
        "masks": os.path.join(out_dir, "masks"),
        "images": os.path.join(out_dir, "images"),
    }
    write_flow_videos(paths["flows"], paths["masks"])
    write_images(paths["images"])
    z0 = LatentVideo(make_rng(0, "fixture-z0").standard_normal((4, 4, 8, 8)))
    paths["z0"] = write_latent(os.path.join(out_dir, "z0.latv"), z0)
    logger.info(f"Wrote fixtures to {out_dir}")
    return paths


def main():
    parser = argparse.ArgumentParser(description='Write synthetic dforge inputs')
    parser.add_argument('out_dir', nargs='?', default='fixtures', help='Destination directory')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
    for name, path in write_fixtures(args.out_dir).items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
