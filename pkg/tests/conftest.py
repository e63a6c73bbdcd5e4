import pytest

from src.config.pipeline_config import (
    BathymetryConfig,
    PipelineConfig,
    SimulatorConfig,
    SonarConfig,
    SurveyConfig,
)
from src.simulator.heightmap import Groove, carve_grooves, flat_heightmap
from tests.helpers import FLOOR_DEPTH


@pytest.fixture
def sonar() -> SonarConfig:
    return SonarConfig(max_range=40.0, bins_per_side=160, canonical_resolution=0.5)


@pytest.fixture
def flat_map():
    return flat_heightmap((-60.0, 90.0, -40.0, 60.0), FLOOR_DEPTH, cell_size=0.5)


@pytest.fixture
def grooved_map(flat_map):
    return carve_grooves(flat_map, [Groove((15.0, -30.0), (15.0, 50.0), 0.5, 2.0)])


@pytest.fixture
def mini_config() -> PipelineConfig:
    """A two-line survey small enough to simulate in a few seconds."""
    return PipelineConfig(
        sonar=SonarConfig(max_range=30.0, bins_per_side=150, canonical_resolution=0.25),
        survey=SurveyConfig(line_count=2, line_length=30.0, line_spacing=10.0, speed=2.0, ping_rate=4.0,
                            altitude=8.0),
        bathymetry=BathymetryConfig(cell_size=0.25, base_depth=30.0, noise_amplitude=0.2, mark_count=10,
                                    mark_length=(20.0, 40.0), margin=40.0),
        simulator=SimulatorConfig(raw_bins_per_side=150, speckle_looks=0),
    )
