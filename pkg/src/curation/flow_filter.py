import logging
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.utils.errors import AllZero, EmptySequence, InvalidRange, ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (pixels/frame) from frame_index to the next frame."""
    u: np.ndarray
    v: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.shape != v.shape or u.ndim != 2:
            raise ShapeMismatch(f"flow planes must be equal 2D grids, got {u.shape} / {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ShapeMismatch("flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True)
class MaskFrame:
    mask: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class FlowStats:
    mean_magnitude: float
    static_fraction: float
    dynamic_fraction: float
    uniformity: float

    def to_dict(self) -> dict:
        return {
            "mean_magnitude": self.mean_magnitude,
            "static_fraction": self.static_fraction,
            "dynamic_fraction": self.dynamic_fraction,
            "uniformity": self.uniformity,
        }


@dataclass(frozen=True)
class TemporalPolicy:
    min_static: float = 0.6
    min_dynamic: float = 0.02
    max_uniformity: float = 0.8


@dataclass(frozen=True)
class ReferenceWeights:
    w_mask: float = 0.5
    w_flow: float = 0.5


def flow_stats(flow: FlowField, eps_static: float, eps_dyn: float) -> FlowStats:
    """
    Summarize one flow field.

    Static pixels (|flow| < eps_static) are the white regions of a flow
    visualization. Uniformity is the length of the summed unit directions of
    the moving pixels divided by the pixel count: a camera pan scores near 1,
    a single moving object on a still background scores its area fraction.

    Args:
        flow: Flow field
        eps_static: Magnitude below which a pixel counts as static
        eps_dyn: Magnitude above which a pixel counts as dynamic

    Returns:
        FlowStats for the frame
    """
    if eps_static > eps_dyn:
        raise InvalidRange(f"eps_static ({eps_static}) must not exceed eps_dyn ({eps_dyn})")
    magnitude = flow.magnitude()
    n = magnitude.size
    if n == 0:
        raise ShapeMismatch("empty flow field")

    moving = magnitude >= eps_static
    moving &= magnitude > 0
    if np.any(moving):
        ux = flow.u[moving] / magnitude[moving]
        uy = flow.v[moving] / magnitude[moving]
        uniformity = float(np.hypot(ux.sum(), uy.sum()) / n)
    else:
        uniformity = 0.0

    return FlowStats(
        mean_magnitude=float(magnitude.mean()),
        static_fraction=float(np.count_nonzero(magnitude < eps_static) / n),
        dynamic_fraction=float(np.count_nonzero(magnitude > eps_dyn) / n),
        uniformity=min(uniformity, 1.0),
    )


def is_temporal_variant(stats_seq: Sequence[FlowStats], policy: TemporalPolicy = TemporalPolicy()) -> Tuple[bool, float]:
    """
    Decide whether a video shows object motion under a still camera.

    Medians over frames make the verdict independent of frame order.

    Returns:
        (accepted, score) with score = median dynamic * median static fraction
    """
    if len(stats_seq) == 0:
        raise EmptySequence("no flow statistics given")
    static = float(np.median([s.static_fraction for s in stats_seq]))
    dynamic = float(np.median([s.dynamic_fraction for s in stats_seq]))
    uniformity = float(np.median([s.uniformity for s in stats_seq]))
    accepted = (static >= policy.min_static
                and dynamic >= policy.min_dynamic
                and uniformity <= policy.max_uniformity)
    return accepted, dynamic * static


def reference_scores(masks: Sequence[MaskFrame], flows: Sequence[FlowField],
                     weights: ReferenceWeights = ReferenceWeights()) -> np.ndarray:
    """Per-frame score: weighted sum of max-normalized mask area and mean flow magnitude."""
    if len(masks) == 0 or len(flows) == 0:
        raise EmptySequence("reference selection needs at least one frame")
    if len(masks) != len(flows):
        raise ShapeMismatch(f"{len(masks)} masks vs {len(flows)} flows")
    for m, f in zip(masks, flows):
        if m.mask.shape != f.shape:
            raise ShapeMismatch(f"mask {m.mask.shape} does not match flow {f.shape} at frame {f.frame_index}")

    areas = np.array([m.area for m in masks], dtype=np.float64)
    mags = np.array([f.magnitude().mean() for f in flows], dtype=np.float64)
    area_term = areas / areas.max() if areas.max() > 0 else np.zeros_like(areas)
    flow_term = mags / mags.max() if mags.max() > 0 else np.zeros_like(mags)
    return weights.w_mask * area_term + weights.w_flow * flow_term


def select_reference_frame(masks: Sequence[MaskFrame], flows: Sequence[FlowField],
                           weights: ReferenceWeights = ReferenceWeights()) -> int:
    """
    Pick the frame that best shows the dynamic object.

    Returns the index of the highest score (lowest index on ties). When every
    score is zero an AllZero warning is raised and frame 0 is returned.
    """
    scores = reference_scores(masks, flows, weights)
    if not np.any(scores > 0):
        logger.warning("All reference-frame scores are zero, falling back to frame 0")
        warnings.warn("all reference-frame scores are zero", AllZero)
        return 0
    return int(np.argmax(scores))


def sequence_stats(flows: List[FlowField], eps_static: float, eps_dyn: float) -> List[FlowStats]:
    return [flow_stats(f, eps_static, eps_dyn) for f in flows]
