import abc
import logging
from enum import Enum
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import InvalidRange, InvalidTimestep, LengthMismatch, ShapeMismatch
from src.utils.rng import make_rng

logger = logging.getLogger(__name__)


class Director(str, Enum):
    S_DIRECTOR = "S_DIRECTOR"
    T_DIRECTOR = "T_DIRECTOR"
    BASE = "BASE"


@dataclass(frozen=True)
class LatentVideo:
    """Latent grid laid out [frames, channels, height, width]."""
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] < 1:
            raise ShapeMismatch(f"latent video must be F x C x H x W with F >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeMismatch("latent video contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def frame(self, index: int) -> "LatentVideo":
        return LatentVideo(self.data[index:index + 1])


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_bar[t] is the cumulative product of (1 - beta) up to step t; alpha_bar[0] = 1."""
    T: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if alpha_bar.shape != (self.T + 1,):
            raise InvalidRange(f"alpha_bar needs {self.T + 1} entries, got {alpha_bar.shape}")
        if alpha_bar[0] != 1.0 or alpha_bar[-1] <= 0 or np.any(np.diff(alpha_bar) >= 0):
            raise InvalidRange("alpha_bar must start at 1 and decrease strictly to a positive value")
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "alpha_bar", alpha_bar)


@dataclass(frozen=True)
class DirectorSchedule:
    assignments: Tuple[Director, ...]
    switch_step: int

    def __len__(self) -> int:
        return len(self.assignments)

    def to_list(self) -> List[str]:
        return [d.value for d in self.assignments]


@dataclass(frozen=True)
class ConditionPack:
    first_latent: Optional[LatentVideo] = None
    last_latent: Optional[LatentVideo] = None
    text_token: str = ""
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.guidance_scale < 0:
            raise InvalidRange(f"guidance_scale must be >= 0, got {self.guidance_scale}")

    def unconditional(self) -> "ConditionPack":
        """Same image conditioning, empty text."""
        return ConditionPack(self.first_latent, self.last_latent, "", self.guidance_scale)


@dataclass(frozen=True)
class RefinementConfig:
    t0: int
    repeats: int = 1
    mid_timestep: int = 0
    n_steps: int = 10


@dataclass(frozen=True)
class InterpolationLayout:
    condition: ConditionPack
    packed: LatentVideo
    conditioning_mask: np.ndarray


class DenoiserInterface(abc.ABC):
    """
    Noise predictor queried by the samplers.

    Implementations must return a latent of the same shape, must not mutate
    their inputs, and must be deterministic and reentrant.
    """

    @abc.abstractmethod
    def predict_noise(self, z_t: LatentVideo, t: int, condition: ConditionPack, director: Director) -> LatentVideo:
        ...


def _check_shapes(a: LatentVideo, b: LatentVideo, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")


def _check_timestep(t: int, schedule: NoiseSchedule) -> None:
    if not 0 <= t <= schedule.T:
        raise InvalidTimestep(f"timestep {t} outside [0, {schedule.T}]")


def make_schedule(T: int, beta_start: float, beta_end: float, spacing: str = "linear") -> NoiseSchedule:
    """
    Build the DDPM cumulative-alpha table.

    Args:
        T: Number of training steps
        beta_start: First beta
        beta_end: Last beta
        spacing: "linear" in beta or "scaled_linear" (linear in sqrt(beta))

    Returns:
        NoiseSchedule with alpha_bar[0] = 1
    """
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if spacing == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif spacing == "scaled_linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T, dtype=np.float64) ** 2
    else:
        raise InvalidRange(f"unknown beta spacing {spacing!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(T=T, alpha_bar=alpha_bar)


def make_timesteps(T: int, n: int) -> List[int]:
    """n strictly decreasing query timesteps from T; the last step lands on 0."""
    if not 1 <= n <= T:
        raise InvalidRange(f"need 1 <= n_steps <= T, got n={n}, T={T}")
    return [(T * (n - i) + n // 2) // n for i in range(n)]


def q_sample(z0: LatentVideo, t: int, eps: LatentVideo, schedule: NoiseSchedule) -> LatentVideo:
    """Forward diffusion: sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps."""
    _check_shapes(z0, eps, "q_sample")
    _check_timestep(t, schedule)
    a = schedule.alpha_bar[t]
    return LatentVideo(np.sqrt(a) * z0.data + np.sqrt(1.0 - a) * eps.data)


def ddim_step(z_t: LatentVideo, eps_hat: LatentVideo, t: int, t_prev: int, schedule: NoiseSchedule) -> LatentVideo:
    """Deterministic (eta = 0) DDIM update from t to t_prev."""
    _check_shapes(z_t, eps_hat, "ddim_step")
    if not 0 <= t_prev < t <= schedule.T:
        raise InvalidTimestep(f"need 0 <= t_prev < t <= {schedule.T}, got t={t}, t_prev={t_prev}")
    a_t = schedule.alpha_bar[t]
    a_prev = schedule.alpha_bar[t_prev]
    x0_hat = (z_t.data - np.sqrt(1.0 - a_t) * eps_hat.data) / np.sqrt(a_t)
    return LatentVideo(np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps_hat.data)


def cfg_combine(eps_uncond: LatentVideo, eps_cond: LatentVideo, scale: float) -> LatentVideo:
    _check_shapes(eps_uncond, eps_cond, "cfg_combine")
    return LatentVideo(eps_uncond.data + scale * (eps_cond.data - eps_uncond.data))


def switch_once_schedule(n_steps: int, switch_step: int) -> DirectorSchedule:
    """S-Director for the first switch_step steps, T-Director afterwards."""
    if n_steps < 1 or not 0 <= switch_step <= n_steps:
        raise InvalidRange(f"need 0 <= switch_step <= n_steps, got {switch_step} of {n_steps}")
    assignments = tuple(Director.S_DIRECTOR if i < switch_step else Director.T_DIRECTOR for i in range(n_steps))
    return DirectorSchedule(assignments=assignments, switch_step=switch_step)


def uniform_schedule(n_steps: int, director: Director) -> DirectorSchedule:
    switch = n_steps if director == Director.S_DIRECTOR else 0
    return DirectorSchedule(assignments=(director,) * n_steps, switch_step=switch)


def blend_reference(z_t: LatentVideo, z_ref_t: LatentVideo, lam: float) -> LatentVideo:
    """lam * z_t + (1 - lam) * z_ref_t."""
    _check_shapes(z_t, z_ref_t, "blend_reference")
    if not 0.0 <= lam <= 1.0:
        raise InvalidRange(f"blend lambda must be in [0, 1], got {lam}")
    return LatentVideo(lam * z_t.data + (1.0 - lam) * z_ref_t.data)


def _predict(denoiser: DenoiserInterface, z: LatentVideo, t: int, cond: ConditionPack, director: Director) -> LatentVideo:
    eps_cond = denoiser.predict_noise(z, t, cond, director)
    _check_shapes(z, eps_cond, "denoiser output")
    if cond.guidance_scale == 1.0:
        return eps_cond
    eps_uncond = denoiser.predict_noise(z, t, cond.unconditional(), director)
    return cfg_combine(eps_uncond, eps_cond, cond.guidance_scale)


def _query_steps(timesteps: Sequence[int], schedule: NoiseSchedule) -> List[int]:
    steps = [int(t) for t in timesteps]
    if steps and steps[-1] == 0:
        steps = steps[:-1]
    if not steps:
        raise InvalidTimestep("no denoising steps given")
    if any(b >= a for a, b in zip(steps, steps[1:])) or steps[-1] <= 0:
        raise InvalidTimestep(f"timesteps must be strictly decreasing and positive, got {steps}")
    _check_timestep(steps[0], schedule)
    return steps


def sample_trajectory(denoiser: DenoiserInterface, schedule: NoiseSchedule, directors: DirectorSchedule,
                      cond: ConditionPack, init: LatentVideo, timesteps: Sequence[int],
                      ref_latents: Optional[Sequence[LatentVideo]] = None, lam: float = 1.0,
                      blend_window: int = 0) -> List[LatentVideo]:
    """
    Run the DDIM loop and return every latent, init first, final sample last.

    The latent after step i lives at the next query timestep (0 after the
    last step). When ref_latents are given, the latent after each of the
    first blend_window steps is blended with ref_latents[i + 1].
    """
    steps = _query_steps(timesteps, schedule)
    if len(directors) != len(steps):
        raise LengthMismatch(f"{len(directors)} director assignments for {len(steps)} steps")
    if ref_latents is not None:
        if len(ref_latents) != len(steps) + 1:
            raise LengthMismatch(f"need {len(steps) + 1} reference latents, got {len(ref_latents)}")
        if not 0 <= blend_window <= len(steps):
            raise LengthMismatch(f"blend_window {blend_window} exceeds {len(steps)} steps")

    z = init
    trajectory = [z]
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps_hat = _predict(denoiser, z, t, cond, directors.assignments[i])
        z = ddim_step(z, eps_hat, t, t_prev, schedule)
        if ref_latents is not None and i < blend_window:
            z = blend_reference(z, ref_latents[i + 1], lam)
        trajectory.append(z)
    return trajectory


def sample(denoiser: DenoiserInterface, schedule: NoiseSchedule, directors: DirectorSchedule,
           cond: ConditionPack, init: LatentVideo, timesteps: Sequence[int]) -> LatentVideo:
    """
    Switch-Once sampling loop: DDIM with classifier-free guidance, asking the
    denoiser for the director scheduled at each step.

    Args:
        denoiser: Noise predictor
        schedule: Noise schedule
        directors: One director per query step
        cond: Conditioning (guidance_scale 1 skips the unconditional query)
        init: Latent at the first query timestep
        timesteps: Strictly decreasing query timesteps; a trailing 0 is allowed

    Returns:
        Latent at t = 0
    """
    return sample_trajectory(denoiser, schedule, directors, cond, init, timesteps)[-1]


def sample_with_reference(denoiser: DenoiserInterface, schedule: NoiseSchedule, cond: ConditionPack,
                          ref_latents: Sequence[LatentVideo], lam: float, blend_window: int,
                          timesteps: Sequence[int], directors: Optional[DirectorSchedule] = None) -> LatentVideo:
    """
    Sample from the shared reference initialization ref_latents[0], pulling
    the latent toward the reference trajectory for the first blend_window steps.

    ref_latents[i] is the reference latent at the i-th query timestep and the
    last entry is the clean reference. Directors default to the S-Director.
    """
    steps = _query_steps(timesteps, schedule)
    if directors is None:
        directors = uniform_schedule(len(steps), Director.S_DIRECTOR)
    return sample_trajectory(denoiser, schedule, directors, cond, ref_latents[0], steps,
                             ref_latents=ref_latents, lam=lam, blend_window=blend_window)[-1]


def reference_init(z_ref: LatentVideo, timesteps: Sequence[int], schedule: NoiseSchedule,
                   seed: int, stream: str = "reference_init") -> List[LatentVideo]:
    """
    Noise a clean reference latent to every query timestep with one shared
    seeded noise draw. The clean latent is appended as the t = 0 entry.
    """
    steps = _query_steps(timesteps, schedule)
    eps = LatentVideo(make_rng(seed, stream).standard_normal(z_ref.shape))
    return [q_sample(z_ref, t, eps, schedule) for t in steps] + [z_ref]


def refine_pass(latent: LatentVideo, denoiser: DenoiserInterface, schedule: NoiseSchedule, t_start: int,
                n_steps: int, rng: np.random.Generator, cond: Optional[ConditionPack] = None) -> LatentVideo:
    """Re-noise to t_start with noise drawn from rng, then denoise to 0 under the T-Director."""
    _check_timestep(t_start, schedule)
    if t_start == 0:
        return latent
    eps = LatentVideo(rng.standard_normal(latent.shape))
    noisy = q_sample(latent, t_start, eps, schedule)
    steps = make_timesteps(t_start, min(n_steps, t_start))
    directors = uniform_schedule(len(steps), Director.T_DIRECTOR)
    return sample(denoiser, schedule, directors, cond or ConditionPack(), noisy, steps)


def refine_appearance(video_latent: LatentVideo, denoiser: DenoiserInterface, schedule: NoiseSchedule,
                      config: RefinementConfig, rng_seed: int, stream: str = "refine",
                      cond: Optional[ConditionPack] = None) -> LatentVideo:
    """
    SDEdit-style appearance refinement.

    The first pass re-noises to config.t0, each further pass (repeats in
    total) only to config.mid_timestep. All passes draw from one generator
    seeded by (rng_seed, stream).
    """
    if not 0 <= config.t0 <= schedule.T or not 0 <= config.mid_timestep <= config.t0:
        raise InvalidRange(f"need 0 <= mid_timestep <= t0 <= T, got t0={config.t0}, mid={config.mid_timestep}")
    if config.repeats < 1 or config.n_steps < 1:
        raise InvalidRange("repeats and n_steps must be >= 1")
    if config.t0 == 0:
        return video_latent

    rng = make_rng(rng_seed, stream)
    latent = refine_pass(video_latent, denoiser, schedule, config.t0, config.n_steps, rng, cond)
    for _ in range(config.repeats - 1):
        latent = refine_pass(latent, denoiser, schedule, config.mid_timestep, config.n_steps, rng, cond)
    return latent


def pack_interpolation_conditioning(z1: LatentVideo, z2: LatentVideo, z_t: LatentVideo,
                                    text_token: str = "", guidance_scale: float = 1.0) -> InterpolationLayout:
    """
    Place z1 before and z2 after the noisy frames along the frame axis.

    conditioning_mask marks the two conditioning frames; they are excluded
    from the denoising loss.
    """
    frame_shape = z_t.shape[1:]
    for name, z in (("z1", z1), ("z2", z2)):
        if z.n_frames != 1 or z.shape[1:] != frame_shape:
            raise ShapeMismatch(f"{name} must be a single frame of shape {frame_shape}, got {z.shape}")
    packed = LatentVideo(np.concatenate([z1.data, z_t.data, z2.data], axis=0))
    mask = np.zeros(packed.n_frames, dtype=bool)
    mask[0] = mask[-1] = True
    condition = ConditionPack(first_latent=z1, last_latent=z2, text_token=text_token, guidance_scale=guidance_scale)
    return InterpolationLayout(condition=condition, packed=packed, conditioning_mask=mask)


def unpack_interpolation_conditioning(layout: InterpolationLayout) -> Tuple[LatentVideo, LatentVideo, LatentVideo]:
    mask = layout.conditioning_mask
    data = layout.packed.data
    if len(mask) != len(data) or not (mask[0] and mask[-1]) or mask[1:-1].any():
        raise ShapeMismatch("conditioning mask does not describe a head/tail layout")
    return LatentVideo(data[:1]), LatentVideo(data[-1:]), LatentVideo(data[1:-1])


def diffusion_mse_loss(eps_hat: LatentVideo, eps: LatentVideo, mask: Optional[np.ndarray] = None) -> float:
    """Mean squared error over frames not flagged in the conditioning mask."""
    _check_shapes(eps_hat, eps, "diffusion_mse_loss")
    diff = eps_hat.data - eps.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (eps.n_frames,):
            raise ShapeMismatch(f"mask of length {mask.shape} for {eps.n_frames} frames")
        diff = diff[~mask]
        if diff.size == 0:
            raise ShapeMismatch("every frame is a conditioning frame")
    return float(np.mean(diff ** 2))
