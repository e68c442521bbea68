import os
import json
import hashlib
import logging
import configparser
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv

from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

# Pick up DFORGE_* overrides from a local .env.
load_dotenv()


@dataclass(frozen=True)
class FilterSection:
    """Scene filter rules for spatial-variant curation."""
    max_xy_aspect_ratio: float = 2.0
    min_angular_span_deg: float = 300.0
    arc_span_deg: float = 90.0
    distance_weight: float = 1.0
    director_family: str = "SURROUND_360"


@dataclass(frozen=True)
class PlanSection:
    n_frames: int = 49               # frames per generated video
    orbit_radius: float = 1.0
    margin: float = 0.0
    scene_diagonal: float = 1.0      # translation normalizer for director selection


@dataclass(frozen=True)
class TsdfSection:
    voxel_size: float = 0.02
    dims: Tuple[int, int, int] = (64, 64, 64)
    origin: Tuple[float, float, float] = (-0.63, -0.63, -0.63)
    truncation_voxels: float = 4.0
    max_weight: float = 64.0
    occupancy_band: float = 0.0


@dataclass(frozen=True)
class FlowSection:
    eps_static: float = 0.5
    eps_dyn: float = 1.0
    min_static: float = 0.6
    min_dynamic: float = 0.02
    max_uniformity: float = 0.8
    w_mask: float = 0.5
    w_flow: float = 0.5


@dataclass(frozen=True)
class SamplerSection:
    train_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    spacing: str = "scaled_linear"
    inference_steps: int = 50        # DDIM steps at inference
    switch_step: int = 5             # S-Director -> T-Director at the 4th/5th step
    guidance_scale: float = 6.0
    blend_lambda: float = 0.7
    blend_window: int = 10
    mock: str = "director_sensitive"
    mock_mu: float = 0.5
    mock_sigma: float = 1.0
    latent_shape: Tuple[int, int, int, int] = (4, 4, 8, 8)


@dataclass(frozen=True)
class RefineSection:
    t0: int = 500
    repeats: int = 2
    mid_timestep: int = 250
    n_steps: int = 10


@dataclass(frozen=True)
class LossSection:
    l1: float = 0.8                  # lambda_1
    ssim: float = 0.2                # lambda_ssim
    lpips: float = 0.3               # lambda_lpips
    tv: float = 0.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    threads: int = 1
    format: str = "json"


@dataclass(frozen=True)
class TrainingSection:
    """Training recipe of the directors. Recorded for reference, never executed."""
    lora_rank: int = 256
    lora_steps: int = 3000
    lora_lr: float = 1e-3
    interp_full_steps: int = 2000
    interp_full_lr: float = 5e-5
    interp_lora_steps: int = 1000
    scene_opt_steps: int = 7000
    long_frames: int = 145           # extended video length (3x the base model)
    resolution: Tuple[int, int] = (480, 320)
    multiview_cameras: int = 32
    videos_per_director: int = 100


_SECTIONS = {
    "filter": FilterSection,
    "plan": PlanSection,
    "tsdf": TsdfSection,
    "flow": FlowSection,
    "sampler": SamplerSection,
    "refine": RefineSection,
    "loss": LossSection,
    "run": RunSection,
    "training": TrainingSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    filter: FilterSection = field(default_factory=FilterSection)
    plan: PlanSection = field(default_factory=PlanSection)
    tsdf: TsdfSection = field(default_factory=TsdfSection)
    flow: FlowSection = field(default_factory=FlowSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    refine: RefineSection = field(default_factory=RefineSection)
    loss: LossSection = field(default_factory=LossSection)
    run: RunSection = field(default_factory=RunSection)
    training: TrainingSection = field(default_factory=TrainingSection)

    def to_dict(self) -> Dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        if seed is None:
            return self
        return replace(self, run=replace(self.run, seed=int(seed)))


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return tuple(type(d)(float(p)) if isinstance(d, int) else type(d)(p)
                         for d, p in zip(default, parts))
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as e:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({e})") from e


def parse_config(text: str) -> PipelineConfig:
    """
    Parse a sectioned key = value config.

    Args:
        text: Config file contents

    Returns:
        PipelineConfig with every unspecified key left at its default
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e

    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        cls = _SECTIONS[name]
        defaults = {f.name: f.default for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in defaults:
                raise ConfigError(f"{name}.{key}: unknown key")
            values[key] = _convert(name, key, raw, defaults[key])
        sections[name] = cls(**values)
    return PipelineConfig(**sections)


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Load the config at path, or the defaults when no path is given."""
    if path is None:
        config = PipelineConfig()
    else:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            config = parse_config(f.read())
        logger.info(f"Loaded config from {path}")

    threads = os.environ.get("DFORGE_THREADS")
    if threads:
        try:
            config = replace(config, run=replace(config.run, threads=max(1, int(threads))))
        except ValueError as e:
            raise ConfigError(f"DFORGE_THREADS: cannot parse {threads!r}") from e
    return config


def dump_config(config: PipelineConfig) -> str:
    """Render config back to the sectioned text format."""
    lines = []
    for name, section in asdict(config).items():
        lines.append(f"[{name}]")
        for key, value in section.items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
