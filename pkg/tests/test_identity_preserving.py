#!/usr/bin/env python3
"""
Tests for identity-preserving 4D generation
"""

import sys
import os

import numpy as np
import pytest

# Add the project root to Python path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.diffusion.denoisers import GaussianDenoiser
from src.diffusion.diffusion_orchestrator import LatentVideo, RefinementConfig, make_schedule, make_timesteps
from src.diffusion.identity_preserving import demo_temporal_inputs, generate_4d, transpose_videos
from src.utils.errors import LengthMismatch
from src.utils.rng import make_rng
from src.utils.synthetic import moving_square_flow

SCHEDULE = make_schedule(1000, 1e-4, 0.02)
STEPS = make_timesteps(1000, 8)
N_TIME = 4
N_VIEWS = 3


def _inputs():
    temporal = LatentVideo(make_rng(4, "temporal").standard_normal((N_TIME, 2, 4, 4)))
    masks, flows = [], []
    # frame 2 has the largest square
    for k, square in enumerate([2, 3, 6, 4]):
        flow, mask = moving_square_flow(size=12, square=square, velocity=(1.0, 1.0), offset=2, frame_index=k)
        masks.append(mask)
        flows.append(flow)
    return temporal, masks, flows


def _generate(lam=0.5, blend_window=3, refine=RefinementConfig(t0=0), max_workers=1):
    temporal, masks, flows = _inputs()
    mock = GaussianDenoiser(0.0, 1.0, SCHEDULE, follow_first_latent=True)
    return generate_4d(temporal, masks, flows, mock, SCHEDULE, STEPS, N_VIEWS, lam, blend_window,
                       refine, seed=21, max_workers=max_workers)


def test_transpose_videos():
    videos = [LatentVideo(np.full((N_VIEWS, 1, 1, 1), float(k)) + np.arange(N_VIEWS)[:, None, None, None] * 10)
              for k in range(N_TIME)]
    cameras = transpose_videos(videos)
    assert len(cameras) == N_VIEWS
    for j, camera in enumerate(cameras):
        assert camera.n_frames == N_TIME
        assert camera.data[:, 0, 0, 0].tolist() == [10.0 * j + k for k in range(N_TIME)]

    with pytest.raises(LengthMismatch):
        transpose_videos([LatentVideo(np.zeros((2, 1, 1, 1))), LatentVideo(np.zeros((3, 1, 1, 1)))])


def test_demo_temporal_inputs_match_moving_square():
    video, masks, flows = demo_temporal_inputs((N_TIME, 2, 8, 8), 0.5, seed=3)
    assert video.shape == (N_TIME, 2, 8, 8)
    assert len(masks) == len(flows) == N_TIME
    for k in range(N_TIME):
        flow, mask = moving_square_flow(size=8, square=2 + k % 3, velocity=(1.0 + k, 0.5), offset=k % 2,
                                        frame_index=k)
        assert np.array_equal(masks[k].mask, mask.mask)
        assert np.array_equal(flows[k].u, flow.u)
        assert np.array_equal(flows[k].v, flow.v)
    again, _, _ = demo_temporal_inputs((N_TIME, 2, 8, 8), 0.5, seed=3)
    assert np.array_equal(again.data, video.data)


def test_generate_4d_layout():
    result = _generate()
    assert result.reference_frame == 2
    assert result.reference_video.shape == (N_VIEWS, 2, 4, 4)
    assert len(result.frame_videos) == N_TIME
    assert all(v.shape == (N_VIEWS, 2, 4, 4) for v in result.frame_videos)
    assert len(result.camera_videos) == N_VIEWS
    assert all(v.shape == (N_TIME, 2, 4, 4) for v in result.camera_videos)


def test_full_override_copies_the_reference_identity():
    result = _generate(lam=0.0, blend_window=len(STEPS))
    for video in result.frame_videos:
        assert np.array_equal(video.data, result.reference_video.data)
    for j, camera in enumerate(result.camera_videos):
        for k in range(N_TIME):
            assert np.array_equal(camera.data[k], result.reference_video.data[j])


def test_frames_keep_their_own_content_without_blending():
    temporal, _, _ = _inputs()
    result = _generate(lam=1.0, blend_window=0)
    # the mock pulls every frame toward its own conditioning latent
    means = [v.data.mean(axis=0) for v in result.frame_videos]
    for k in range(N_TIME):
        distances = [np.linalg.norm(means[k] - temporal.data[m]) for m in range(N_TIME)]
        assert int(np.argmin(distances)) == k


def test_generate_4d_is_deterministic_across_workers():
    refine = RefinementConfig(t0=300, repeats=2, mid_timestep=100, n_steps=4)
    serial = _generate(refine=refine, max_workers=1)
    threaded = _generate(refine=refine, max_workers=4)
    assert np.array_equal(serial.reference_video.data, threaded.reference_video.data)
    for a, b in zip(serial.camera_videos, threaded.camera_videos):
        assert np.array_equal(a.data, b.data)


def test_generate_4d_checks_lengths():
    temporal, masks, flows = _inputs()
    mock = GaussianDenoiser(0.0, 1.0, SCHEDULE)
    with pytest.raises(LengthMismatch):
        generate_4d(temporal, masks[:-1], flows, mock, SCHEDULE, STEPS, N_VIEWS, 0.5, 2,
                    RefinementConfig(t0=0), seed=1)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
