# Simulator Package
from src.simulator.dataset import SimulatedDataset, simulate_dataset
from src.simulator.drift import DriftModel, DriftReport, apply_trajectory, inject_drift
from src.simulator.heightmap import Groove, Heightmap, carve_grooves, flat_heightmap, generate_bathymetry
from src.simulator.raycast import raycast, raycast_batch
from src.simulator.survey import SurveyPlan, simulate_ping, simulate_survey
