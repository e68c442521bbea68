"""Analytic mock denoisers used to verify the samplers without a network."""
import logging
from typing import Dict, Optional, Union

import numpy as np

from src.diffusion.diffusion_orchestrator import (ConditionPack, DenoiserInterface, Director, LatentVideo,
                                                  NoiseSchedule)
from src.utils.errors import InvalidRange, InvalidTimestep

logger = logging.getLogger(__name__)


class OracleDenoiser(DenoiserInterface):
    """Knows the clean latent z0 and returns the exact noise that explains z_t."""

    def __init__(self, z0: LatentVideo, schedule: NoiseSchedule):
        self.z0 = z0
        self.schedule = schedule

    def predict_noise(self, z_t: LatentVideo, t: int, condition: ConditionPack, director: Director) -> LatentVideo:
        if t <= 0:
            raise InvalidTimestep("the oracle cannot be queried at t = 0")
        a = self.schedule.alpha_bar[t]
        return LatentVideo((z_t.data - np.sqrt(a) * self.z0.data) / np.sqrt(1.0 - a))


class GaussianDenoiser(DenoiserInterface):
    """
    Exact posterior noise prediction for data z0 ~ N(mu, sigma^2 I).

    With z_t = sqrt(a) z0 + sqrt(1 - a) eps the posterior mean of eps is
    sqrt(1 - a) (z_t - sqrt(a) mu) / (a sigma^2 + 1 - a).

    Args:
        mu: Data mean, scalar or broadcastable to the latent
        sigma: Data standard deviation
        schedule: Noise schedule giving alpha_bar
        follow_first_latent: Use condition.first_latent (broadcast over
            frames) as the data mean whenever it is present
    """

    def __init__(self, mu: Union[float, np.ndarray], sigma: float, schedule: NoiseSchedule,
                 follow_first_latent: bool = False):
        if sigma <= 0:
            raise InvalidRange(f"sigma must be positive, got {sigma}")
        self.mu = mu
        self.sigma = float(sigma)
        self.schedule = schedule
        self.follow_first_latent = follow_first_latent

    def _mean(self, condition: ConditionPack):
        if self.follow_first_latent and condition.first_latent is not None:
            return condition.first_latent.data
        return self.mu

    def predict_noise(self, z_t: LatentVideo, t: int, condition: ConditionPack, director: Director) -> LatentVideo:
        a = self.schedule.alpha_bar[t]
        mean = self._mean(condition)
        eps = np.sqrt(1.0 - a) * (z_t.data - np.sqrt(a) * mean) / (a * self.sigma ** 2 + 1.0 - a)
        return LatentVideo(np.broadcast_to(eps, z_t.shape))


class DirectorSensitiveDenoiser(DenoiserInterface):
    """Routes each director label to its own Gaussian mock, so director schedules change the result."""

    def __init__(self, experts: Dict[Director, DenoiserInterface], fallback: Optional[DenoiserInterface] = None):
        self.experts = dict(experts)
        self.fallback = fallback

    @classmethod
    def gaussian(cls, mu: float, sigma: float, schedule: NoiseSchedule) -> "DirectorSensitiveDenoiser":
        """S-Director pulls toward +mu, T-Director toward -mu, BASE toward 0."""
        return cls({
            Director.S_DIRECTOR: GaussianDenoiser(mu, sigma, schedule),
            Director.T_DIRECTOR: GaussianDenoiser(-mu, sigma, schedule),
            Director.BASE: GaussianDenoiser(0.0, sigma, schedule),
        })

    def predict_noise(self, z_t: LatentVideo, t: int, condition: ConditionPack, director: Director) -> LatentVideo:
        expert = self.experts.get(director, self.fallback)
        if expert is None:
            raise InvalidRange(f"no expert registered for {director}")
        return expert.predict_noise(z_t, t, condition, director)


class ConstantDenoiser(DenoiserInterface):
    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def predict_noise(self, z_t: LatentVideo, t: int, condition: ConditionPack, director: Director) -> LatentVideo:
        return LatentVideo(np.full(z_t.shape, self.value))


def build_denoiser(kind: str, schedule: NoiseSchedule, mu: float = 0.5, sigma: float = 1.0,
                   z0: Optional[LatentVideo] = None) -> DenoiserInterface:
    """Mock denoiser factory keyed by the sampler config's `mock` name."""
    if kind == "oracle":
        if z0 is None:
            raise InvalidRange("the oracle mock needs the clean latent")
        return OracleDenoiser(z0, schedule)
    if kind == "gaussian":
        return GaussianDenoiser(mu, sigma, schedule)
    if kind == "anchored":
        return GaussianDenoiser(mu, sigma, schedule, follow_first_latent=True)
    if kind == "director_sensitive":
        return DirectorSensitiveDenoiser.gaussian(mu, sigma, schedule)
    if kind == "constant":
        return ConstantDenoiser(mu)
    raise InvalidRange(f"unknown mock denoiser {kind!r}")
