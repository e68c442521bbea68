import abc
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import cv2
import numpy as np

from src.utils.errors import ImageTooSmall, InvalidRange, ShapeMismatch

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x 3 image with values in [0, 1]."""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeMismatch(f"image must be H x W x 3, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise InvalidRange("image contains non-finite values")
        if pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise InvalidRange("image values must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @classmethod
    def clipped(cls, pixels: np.ndarray) -> "ImageBuffer":
        return cls(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0))

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class ConfidenceMap:
    conf: np.ndarray

    def __post_init__(self):
        conf = np.asarray(self.conf, dtype=np.float64)
        if conf.ndim != 2:
            raise ShapeMismatch(f"confidence must be H x W, got {conf.shape}")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0):
            raise InvalidRange("confidence must be finite and non-negative")
        object.__setattr__(self, "conf", conf)


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.8
    ssim: float = 0.2
    lpips: float = 0.3
    tv: float = 0.0

    def __post_init__(self):
        if min(self.l1, self.ssim, self.lpips, self.tv) < 0:
            raise InvalidRange("loss weights must be non-negative")

    @classmethod
    def dynamic_scene(cls) -> "LossWeights":
        return cls(l1=1.0, ssim=1.0, lpips=0.0, tv=1.0)

    def as_dict(self) -> Dict[str, float]:
        return {"l1": self.l1, "ssim": self.ssim, "lpips": self.lpips, "tv": self.tv}


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    per_term: Dict[str, float] = field(default_factory=dict)
    weights: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def assemble(cls, terms: Dict[str, float], weights: Dict[str, float]) -> "LossBreakdown":
        total = float(sum(weights[name] * value for name, value in terms.items()))
        return cls(total=total, per_term=dict(terms), weights={k: weights[k] for k in terms})

    def to_dict(self) -> Dict:
        return {"total": self.total, "per_term": self.per_term, "weights": self.weights}


class PerceptualTerm(abc.ABC):
    """
    Stand-in for a learned perceptual distance.

    Returns either a scalar or an H x W map; maps are confidence-weighted per
    pixel, scalars are scaled by the mean confidence.
    """

    @abc.abstractmethod
    def __call__(self, pred: ImageBuffer, gt: ImageBuffer) -> Union[float, np.ndarray]:
        ...


class ConstantPerceptual(PerceptualTerm):
    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def __call__(self, pred: ImageBuffer, gt: ImageBuffer) -> float:
        return self.value


def _check_pair(pred: ImageBuffer, gt: ImageBuffer) -> None:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} and gt {gt.shape} differ")


def _conf(conf: Optional[ConfidenceMap], shape) -> Optional[np.ndarray]:
    if conf is None:
        return None
    if conf.conf.shape != shape[:2]:
        raise ShapeMismatch(f"confidence {conf.conf.shape} does not match image {shape[:2]}")
    return conf.conf


def l1_loss(pred: ImageBuffer, gt: ImageBuffer, conf: Optional[ConfidenceMap] = None) -> float:
    """Mean of conf * |pred - gt| over pixels and channels (conf defaults to 1)."""
    _check_pair(pred, gt)
    diff = np.abs(pred.pixels - gt.pixels)
    weights = _conf(conf, pred.shape)
    if weights is not None:
        diff = diff * weights[:, :, None]
    return float(np.mean(diff))


def ssim_map(pred: ImageBuffer, gt: ImageBuffer, window: int = 11, sigma: float = 1.5) -> np.ndarray:
    """
    Local SSIM at every full-window position, averaged over channels.

    Returns an (H - window + 1) x (W - window + 1) map; entry (i, j) belongs
    to the window centered on pixel (i + window // 2, j + window // 2).
    """
    _check_pair(pred, gt)
    if window < 1 or window % 2 == 0:
        raise InvalidRange(f"SSIM window must be odd and positive, got {window}")
    height, width = pred.shape[:2]
    if height < window or width < window:
        raise ImageTooSmall(f"{height}x{width} image is smaller than the {window}px SSIM window")

    kernel = cv2.getGaussianKernel(window, sigma, ktype=cv2.CV_64F)
    r = window // 2

    def blur(img: np.ndarray) -> np.ndarray:
        out = cv2.sepFilter2D(img, cv2.CV_64F, kernel, kernel, borderType=cv2.BORDER_REFLECT)
        return out[r:height - r, r:width - r]

    maps = []
    for c in range(3):
        x = np.ascontiguousarray(pred.pixels[:, :, c])
        y = np.ascontiguousarray(gt.pixels[:, :, c])
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - mu_x ** 2
        var_y = blur(y * y) - mu_y ** 2
        cov = blur(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim_loss(pred: ImageBuffer, gt: ImageBuffer, window: int = 11, sigma: float = 1.5,
              conf: Optional[ConfidenceMap] = None) -> float:
    """1 - SSIM, averaged over window positions; conf weights each position by its center pixel."""
    per_position = 1.0 - ssim_map(pred, gt, window, sigma)
    weights = _conf(conf, pred.shape)
    if weights is not None:
        r = window // 2
        per_position = per_position * weights[r:pred.shape[0] - r, r:pred.shape[1] - r]
    return float(np.mean(per_position))


def tv_loss(img: Union[ImageBuffer, np.ndarray]) -> float:
    """Mean absolute forward difference along x plus along y."""
    pixels = img.pixels if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    if pixels.ndim < 2 or pixels.shape[0] < 2 or pixels.shape[1] < 2:
        raise ImageTooSmall(f"total variation needs at least 2x2 pixels, got {pixels.shape}")
    dx = np.abs(np.diff(pixels, axis=1))
    dy = np.abs(np.diff(pixels, axis=0))
    return float(np.mean(dx) + np.mean(dy))


def _perceptual(perceptual: Optional[PerceptualTerm], pred: ImageBuffer, gt: ImageBuffer,
                weights: Optional[np.ndarray]) -> float:
    if perceptual is None:
        return 0.0
    value = perceptual(pred, gt)
    if np.ndim(value) == 0:
        return float(value) * (1.0 if weights is None else float(np.mean(weights)))
    value = np.asarray(value, dtype=np.float64)
    if value.shape != pred.shape[:2]:
        raise ShapeMismatch(f"perceptual map {value.shape} does not match image {pred.shape[:2]}")
    return float(np.mean(value if weights is None else value * weights))


def confidence_weighted_loss(pred: ImageBuffer, gt: ImageBuffer, conf: ConfidenceMap,
                             weights: LossWeights = LossWeights(), perceptual: Optional[PerceptualTerm] = None,
                             window: int = 11, sigma: float = 1.5) -> LossBreakdown:
    """
    Confidence-aware reconstruction loss for scene optimization.

    Each term is weighted per pixel by conf before its mean, so conf = 1
    reduces to the plain weighted sum and conf = 0 gives 0.

    Args:
        pred: Rendered image
        gt: Target (generated) frame
        conf: Per-pixel confidence
        weights: l1 / ssim / lpips weights (tv is not part of this loss)
        perceptual: Optional perceptual term provider, 0 when absent

    Returns:
        LossBreakdown with l1, ssim and lpips terms
    """
    _check_pair(pred, gt)
    terms = {
        "l1": l1_loss(pred, gt, conf),
        "ssim": ssim_loss(pred, gt, window, sigma, conf),
        "lpips": _perceptual(perceptual, pred, gt, _conf(conf, pred.shape)),
    }
    return LossBreakdown.assemble(terms, weights.as_dict())


def dynamic_scene_loss(pred: ImageBuffer, gt: ImageBuffer, weights: LossWeights = LossWeights.dynamic_scene(),
                       window: int = 11, sigma: float = 1.5) -> LossBreakdown:
    """L1 + TV + SSIM for the deformable scene; TV is taken over the residual pred - gt."""
    _check_pair(pred, gt)
    terms = {
        "l1": l1_loss(pred, gt),
        "ssim": ssim_loss(pred, gt, window, sigma),
        "tv": tv_loss(pred.pixels - gt.pixels),
    }
    return LossBreakdown.assemble(terms, weights.as_dict())
