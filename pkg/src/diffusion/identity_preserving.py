import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.curation.flow_filter import FlowField, MaskFrame, ReferenceWeights, select_reference_frame
from src.diffusion.diffusion_orchestrator import (ConditionPack, DenoiserInterface, Director, LatentVideo,
                                                  NoiseSchedule, RefinementConfig, reference_init,
                                                  refine_appearance, sample, sample_with_reference,
                                                  uniform_schedule)
from src.utils.errors import LengthMismatch
from src.utils.parallel import ordered_map
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FourDResult:
    reference_frame: int
    reference_video: LatentVideo
    frame_videos: List[LatentVideo]      # per time step, frames = camera views
    camera_videos: List[LatentVideo]     # per camera, frames = time steps, refined


def demo_temporal_inputs(shape: Tuple[int, int, int, int], mu: float,
                         seed: int) -> Tuple[LatentVideo, List[MaskFrame], List[FlowField]]:
    """
    Stand-in temporal input for mock 4D runs.

    The latent is noise around mu. Each frame has one square object on a still
    background, moving right faster from frame to frame.
    """
    n_time, _, height, width = shape
    rng = make_rng(seed, "4d-video")
    video = LatentVideo(mu + 0.1 * rng.standard_normal(shape))
    masks, flows = [], []
    for k in range(n_time):
        square, offset = max(1, height // 4 + k % 3), k % 2
        mask = np.zeros((height, width), dtype=bool)
        mask[offset:offset + square, offset:offset + square] = True
        masks.append(MaskFrame(mask, k))
        flows.append(FlowField(np.where(mask, 1.0 + k, 0.0), np.where(mask, 0.5, 0.0), k))
    return video, masks, flows


def transpose_videos(frame_videos: Sequence[LatentVideo]) -> List[LatentVideo]:
    """Turn per-time-step multi-view videos into per-camera temporal videos."""
    n_views = frame_videos[0].n_frames
    if any(v.n_frames != n_views for v in frame_videos):
        raise LengthMismatch("all per-frame videos need the same number of views")
    stacked = np.stack([v.data for v in frame_videos], axis=1)    # views x time x C x H x W
    return [LatentVideo(stacked[j]) for j in range(n_views)]


def generate_4d(temporal_video: LatentVideo, masks: Sequence[MaskFrame], flows: Sequence[FlowField],
                denoiser: DenoiserInterface, schedule: NoiseSchedule, timesteps: Sequence[int],
                n_views: int, lam: float, blend_window: int, refine: RefinementConfig, seed: int,
                weights: ReferenceWeights = ReferenceWeights(), guidance_scale: float = 1.0,
                max_workers: Optional[int] = None) -> FourDResult:
    """
    Identity-preserving 4D generation from a temporal video latent.

    1. Pick the reference frame from mask area and flow magnitude.
    2. Generate its multi-view video with the S-Director and noise it back
       to every query timestep with one shared noise draw.
    3. Generate every frame's multi-view video from that shared
       initialization, blending toward the reference in the early steps.
    4. Regroup into per-camera videos and refine each with the T-Director.

    Args:
        temporal_video: Latent of the input video, one frame per time step
        masks: Dynamic-object masks per time step
        flows: Optical flow per time step
        denoiser: Noise predictor
        schedule: Noise schedule
        timesteps: Query timesteps of every sampling run
        n_views: Frames of each generated multi-view video
        lam: Blend weight of the running latent
        blend_window: Number of early steps that blend
        refine: Appearance refinement settings
        seed: Root seed
        weights: Reference-frame score weights
        guidance_scale: CFG scale for every run

    Returns:
        FourDResult
    """
    if len(masks) != temporal_video.n_frames or len(flows) != temporal_video.n_frames:
        raise LengthMismatch(f"{temporal_video.n_frames} frames but {len(masks)} masks / {len(flows)} flows")

    ref_index = select_reference_frame(masks, flows, weights)
    logger.info(f"Reference frame {ref_index} of {temporal_video.n_frames}")

    view_shape = (n_views,) + temporal_video.shape[1:]
    init = LatentVideo(make_rng(seed, "4d-init").standard_normal(view_shape))
    steps = [t for t in timesteps if t > 0]
    spatial = uniform_schedule(len(steps), Director.S_DIRECTOR)

    def condition(k: int) -> ConditionPack:
        return ConditionPack(first_latent=temporal_video.frame(k), guidance_scale=guidance_scale)

    reference_video = sample(denoiser, schedule, spatial, condition(ref_index), init, steps)
    ref_latents = reference_init(reference_video, steps, schedule, seed)

    def frame_video(k: int) -> LatentVideo:
        return sample_with_reference(denoiser, schedule, condition(k), ref_latents, lam, blend_window, steps, spatial)

    frame_videos = ordered_map(frame_video, range(temporal_video.n_frames), max_workers=max_workers)

    def refined(item) -> LatentVideo:
        j, video = item
        return refine_appearance(video, denoiser, schedule, refine, seed, stream=f"refine-camera-{j}")

    camera_videos = ordered_map(refined, list(enumerate(transpose_videos(frame_videos))), max_workers=max_workers)
    return FourDResult(ref_index, reference_video, list(frame_videos), list(camera_videos))
