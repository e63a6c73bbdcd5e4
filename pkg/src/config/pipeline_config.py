import hashlib
import json
import os
import tomllib
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.utils.errors import ConfigError

load_dotenv()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SonarConfig(_Section):
    """Side-scan characteristics; defaults describe a 160 m, 1301-bin per side sonar."""

    max_range: float = Field(160.0, gt=0)
    bins_per_side: int = Field(1301, ge=2)
    beam_width: float = Field(0.005, gt=0, description="beam opening, radians")
    range_std: float = Field(0.5, gt=0, description="range noise std, meters")
    sensor_offset: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    ping_rate: float = Field(4.0, gt=0)
    canonical_resolution: float = Field(0.5, gt=0, description="meters per canonical column")

    @field_validator("sensor_offset")
    @classmethod
    def _seven_numbers(cls, value: List[float]) -> List[float]:
        if len(value) != 7:
            raise ValueError("sensor_offset must be [x, y, z, qw, qx, qy, qz]")
        return value

    @property
    def slant_bin_width(self) -> float:
        return self.max_range / self.bins_per_side

    def sensor_offset_pose(self):
        from src.geometry.pose import Pose

        return Pose.from_array(self.sensor_offset)


class AssociationConfig(_Section):
    cell_size: int = Field(64, gt=0, description="grid cell edge, pixels")
    max_per_cell: int = Field(4, gt=0)
    corner_threshold: float = Field(0.35, gt=0, description="intensity delta of the segment test")
    min_distance: int = Field(3, gt=0, description="non-maximum suppression radius, pixels")
    smoothing_sigma: float = Field(1.0, ge=0, description="Gaussian pre-smoothing before detection")
    max_invalid_fraction: float = Field(0.5, gt=0, le=1)
    radius: float = Field(10.0, ge=0, description="r, near-neighbor search radius in meters")
    ransac_row_tolerance: float = Field(2.0, gt=0)
    ransac_iterations: int = Field(500, gt=0)
    rng_seed: int = 0
    min_overlap_area: float = Field(2000.0, ge=0, description="m^2")


class EstimationConfig(_Section):
    odometry_translation_scale: float = Field(1e-3, gt=0, description="m^2 per meter travelled")
    odometry_rotation_scale: float = Field(1e-6, gt=0, description="rad^2 per meter travelled")
    min_variance: float = Field(1e-6, gt=0)
    depth_prior: bool = True
    depth_prior_scale: float = Field(0.05, gt=0, description="prior std per meter of horizontal distance")
    depth_prior_min_std: float = Field(0.1, gt=0)
    max_iterations: int = Field(50, gt=0)
    ftol: float = Field(1e-9, gt=0)
    gtol: float = Field(1e-8, gt=0)
    outlier_sigma: float = Field(3.0, gt=0)


class GraphConfig(_Section):
    node_stride: int = Field(1, ge=1)
    mode: Literal["batch", "incremental"] = "incremental"
    loop_closure_scale: float = Field(1.0, gt=0, description="multiplies the closure covariance")
    huber_threshold: Optional[float] = Field(None, gt=0)
    max_iterations: int = Field(50, gt=0)
    ftol: float = Field(1e-9, gt=0)
    gtol: float = Field(1e-8, gt=0)
    incremental_horizon: int = Field(400, ge=1, description="graph hops around new factors")
    relinearize_every: int = Field(3, ge=1, description="full solve every n images")


class SurveyConfig(_Section):
    """Lawnmower plan; defaults match a full-scale survey."""

    line_count: int = Field(5, gt=0)
    line_length: float = Field(800.0, gt=0)
    line_spacing: float = Field(50.0, gt=0)
    speed: float = Field(2.0, gt=0)
    ping_rate: float = Field(4.0, gt=0)
    altitude: float = Field(18.0, gt=0)
    include_turns: bool = True


class BathymetryConfig(_Section):
    cell_size: float = Field(0.5, gt=0)
    base_depth: float = Field(100.0, gt=0)
    noise_amplitude: float = Field(0.4, ge=0, description="peak smooth relief, meters")
    noise_scale: float = Field(25.0, gt=0, description="smoothing length of the relief, meters")
    mark_count: int = Field(60, ge=0)
    mark_depth: Tuple[float, float] = (0.2, 0.5)
    mark_width: Tuple[float, float] = (1.0, 3.0)
    mark_length: Tuple[float, float] = (80.0, 400.0)
    reflectivity_mean: float = Field(0.5, ge=0, le=1)
    reflectivity_texture: float = Field(0.35, ge=0)
    texture_scale: float = Field(1.0, gt=0, description="meters")
    margin: float = Field(180.0, ge=0, description="map border around the survey footprint")


class SimulatorConfig(_Section):
    raw_bins_per_side: int = Field(1301, ge=2)
    speckle_looks: int = Field(8, ge=0, description="gamma speckle looks; 0 disables speckle")
    march_step: float = Field(0.5, gt=0)


class DriftConfig(_Section):
    heading_rate_bias_std: float = Field(6e-6, ge=0, description="rad/s, std of the zero-mean heading-rate bias")
    velocity_bias_std: float = Field(5e-3, ge=0, description="m/s, body frame, random direction")
    heading_rate_noise_std: float = Field(2e-5, ge=0)
    velocity_noise_std: float = Field(1e-2, ge=0)
    rng_seed: Optional[int] = None

    @property
    def is_zero(self) -> bool:
        return not any(
            (self.heading_rate_bias_std, self.velocity_bias_std, self.heading_rate_noise_std, self.velocity_noise_std)
        )


class EvaluationConfig(_Section):
    baseline_threshold: float = Field(0.3, ge=0, description="meters")
    baseline_search_radius: float = Field(3.0, gt=0, description="meters, georef prefilter")
    annotation_spacing: int = Field(12, gt=0, description="pixels between proposed annotations")


class RunConfig(_Section):
    seed: int = 7
    threads: int = Field(1, ge=1)
    dataset: str = "dataset"
    out: str = "results"
    zero_drift: bool = False


class PipelineConfig(_Section):
    sonar: SonarConfig = SonarConfig()
    association: AssociationConfig = AssociationConfig()
    estimation: EstimationConfig = EstimationConfig()
    graph: GraphConfig = GraphConfig()
    survey: SurveyConfig = SurveyConfig()
    bathymetry: BathymetryConfig = BathymetryConfig()
    simulator: SimulatorConfig = SimulatorConfig()
    drift: DriftConfig = DriftConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    run: RunConfig = RunConfig()

    def with_overrides(self, **sections) -> "PipelineConfig":
        """Return a copy with fields replaced per section, e.g. run={"seed": 3}."""
        data = self.model_dump()
        for section, values in sections.items():
            if section not in data:
                raise ConfigError(f"Unknown config section: {section}")
            data[section].update({k: v for k, v in values.items() if v is not None})
        return _validate(data)

    @property
    def drift_seed(self) -> int:
        return self.drift.rng_seed if self.drift.rng_seed is not None else self.run.seed + 2


def _validate(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def _env_overrides() -> dict:
    overrides = {}
    if os.getenv("SSS_SLAM_SEED"):
        overrides["seed"] = int(os.getenv("SSS_SLAM_SEED"))
    if os.getenv("SSS_SLAM_THREADS"):
        overrides["threads"] = int(os.getenv("SSS_SLAM_THREADS"))
    return overrides


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Load a TOML config (one table per module), then apply environment overrides."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Cannot parse {path}: {e}") from e
    env = _env_overrides()
    if env:
        data.setdefault("run", {}).update(env)
    return _validate(data)


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
