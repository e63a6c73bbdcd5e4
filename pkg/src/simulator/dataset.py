from dataclasses import dataclass
from typing import List

from src.config.pipeline_config import DriftConfig, PipelineConfig
from src.geometry.trajectory import TrajectoryPoint
from src.simulator.drift import DriftReport, apply_trajectory, inject_drift
from src.simulator.heightmap import Heightmap, generate_bathymetry
from src.simulator.survey import simulate_survey
from src.sonar.ping import Ping


@dataclass
class SimulatedDataset:
    heightmap: Heightmap
    truth: List[TrajectoryPoint]
    pings: List[Ping]  # carrying dead-reckoning poses
    drift: DriftReport


def simulate_dataset(cfg: PipelineConfig) -> SimulatedDataset:
    """Bathymetry, survey and drift with the seed layout seed / seed + 1 / drift seed."""
    seed = cfg.run.seed
    heightmap = generate_bathymetry(seed, cfg.bathymetry, plan=cfg.survey)
    truth, pings = simulate_survey(heightmap, cfg.survey, cfg.sonar, cfg.simulator, seed + 1, cfg.run.threads)
    model = DriftConfig(heading_rate_bias_std=0, velocity_bias_std=0, heading_rate_noise_std=0,
                        velocity_noise_std=0) if cfg.run.zero_drift else cfg.drift
    dead_reckoning, report = inject_drift(truth, model, cfg.drift_seed)
    return SimulatedDataset(heightmap, truth, apply_trajectory(pings, dead_reckoning), report)
