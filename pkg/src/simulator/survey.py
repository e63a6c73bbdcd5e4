"""Lawnmower survey over a heightmap and ray-cast side-scan pings."""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from src.config.pipeline_config import SimulatorConfig, SonarConfig, SurveyConfig
from src.geometry.pose import Pose
from src.geometry.trajectory import TrajectoryPoint
from src.simulator.heightmap import Heightmap
from src.simulator.raycast import raycast_batch
from src.sonar.ping import Ping, downsample_ping
from src.utils.errors import SimulationError
from src.utils.logger import logger

SurveyPlan = SurveyConfig

TURN_LINE = -1
DEPTH_SMOOTHING_PINGS = 8.0  # the vehicle follows the seafloor with some lag


def plan_path(plan: SurveyPlan) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Positions (x, y), yaw and line index sampled every ``speed / ping_rate`` meters.

    Lines run along y, alternately north and south, joined by semicircular
    turns tagged ``TURN_LINE``.
    """
    ds = plan.speed / plan.ping_rate
    xs, ys, yaws, lines = [], [], [], []
    for k in range(plan.line_count):
        x = k * plan.line_spacing
        north = k % 2 == 0
        along = np.arange(int(np.floor(plan.line_length / ds + 1e-9)) + 1) * ds
        xs.append(np.full(along.size, x))
        ys.append(along if north else plan.line_length - along)
        yaws.append(np.full(along.size, np.pi / 2 if north else -np.pi / 2))
        lines.append(np.full(along.size, k))
        if plan.include_turns and k < plan.line_count - 1:
            radius = 0.5 * plan.line_spacing
            steps = max(int(round(np.pi * radius / ds)), 2)
            frac = np.arange(1, steps) / steps
            if north:
                phi = np.pi - np.pi * frac
                heading = np.stack([np.sin(phi), -np.cos(phi)], axis=1)
                cy = plan.line_length
            else:
                phi = np.pi + np.pi * frac
                heading = np.stack([-np.sin(phi), np.cos(phi)], axis=1)
                cy = 0.0
            xs.append(x + radius + radius * np.cos(phi))
            ys.append(cy + radius * np.sin(phi))
            yaws.append(np.arctan2(heading[:, 1], heading[:, 0]))
            lines.append(np.full(phi.size, TURN_LINE))
    return np.concatenate(xs), np.concatenate(ys), np.concatenate(yaws), np.concatenate(lines).astype(int)


def _side_directions(sonar: SonarConfig, bins: int, height: float, sensor: Pose):
    width = sonar.max_range / bins
    slant = (np.arange(bins) + 0.5) * width
    reach = np.flatnonzero(slant > height)
    ground = np.sqrt(slant[reach] ** 2 - height**2)
    per_side = []
    for sign in (1.0, -1.0):  # port is +y of the sensor
        local = np.stack([np.zeros(reach.size), sign * ground, np.full(reach.size, height)], axis=1) / slant[reach, None]
        per_side.append(local @ sensor.rotation.T)
    return width, reach, per_side


def simulate_ping(ping_id: int, time: float, pose: Pose, altitude: float, heightmap: Heightmap,
                  sonar: SonarConfig, sim: SimulatorConfig, seed: int, line: Optional[int] = None) -> Ping:
    """Single-bounce Lambertian return per slant bin with gamma speckle.

    One ray per bin is aimed at the flat-floor point of the bin and
    accumulated into the bin of its actual slant range as reflectivity x
    cos^2(incidence); bins no ray lands in stay 0 (shadow or water column).
    """
    offset = sonar.sensor_offset_pose()
    sensor = pose * offset
    height = altitude - offset.position[2]
    bins = sim.raw_bins_per_side
    width, reach, directions = _side_directions(sonar, bins, height, sensor)
    rng = np.random.default_rng([seed, ping_id])

    sides = []
    for d in directions:
        hits = raycast_batch(np.repeat(sensor.position[None], len(d), axis=0), d, heightmap, sim.march_step)
        ok = np.isfinite(hits[:, 0])
        hit, d = hits[ok], d[ok]
        slant = np.linalg.norm(hit - sensor.position, axis=1)
        index = np.floor(slant / width).astype(int)
        inside = index < bins
        cos_incidence = np.abs(np.sum(heightmap.normal_at(hit[:, 0], hit[:, 1]) * d, axis=1))
        value = heightmap.reflectivity_at(hit[:, 0], hit[:, 1]) * cos_incidence**2
        total = np.bincount(index[inside], weights=value[inside], minlength=bins)
        count = np.bincount(index[inside], minlength=bins)
        intensity = np.where(count > 0, total / np.maximum(count, 1), 0.0)
        if sim.speckle_looks > 0:
            intensity = intensity * rng.gamma(sim.speckle_looks, 1.0 / sim.speckle_looks, bins)
        if bins != sonar.bins_per_side:
            intensity = downsample_ping(intensity, sonar.bins_per_side)
        sides.append(intensity)
    return Ping(ping_id, time, pose, altitude, sides[0], sides[1], line)


def simulate_trajectory(heightmap: Heightmap, plan: SurveyPlan) -> Tuple[List[TrajectoryPoint], np.ndarray, np.ndarray]:
    """Ground-truth poses at the altitude setpoint, measured altitudes and line tags."""
    x, y, yaw, lines = plan_path(plan)
    floor = heightmap.depth_at(x, y)
    if np.any(np.isnan(floor)):
        first = int(np.flatnonzero(np.isnan(floor))[0])
        raise SimulationError(f"Survey leaves the map at ({x[first]:.1f}, {y[first]:.1f})")
    z = gaussian_filter1d(floor, DEPTH_SMOOTHING_PINGS, mode="nearest") - plan.altitude

    origins = np.stack([x, y, z], axis=1)
    down = np.tile([0.0, 0.0, 1.0], (len(x), 1))
    hits = raycast_batch(origins, down, heightmap)
    if np.any(np.isnan(hits[:, 2])):
        raise SimulationError("Vertical ray missed the seafloor below the survey")
    altitude = hits[:, 2] - z

    times = np.arange(len(x)) / plan.ping_rate
    truth = [
        TrajectoryPoint(k, float(times[k]), Pose.from_xyz_rpy(x[k], y[k], z[k], 0.0, 0.0, yaw[k], degrees=False))
        for k in range(len(x))
    ]
    if not plan.include_turns:
        keep = lines != TURN_LINE
        kept = [p for p, k in zip(truth, keep) if k]
        truth = [TrajectoryPoint(i, p.time, p.pose) for i, p in enumerate(kept)]
        altitude, lines = altitude[keep], lines[keep]
    return truth, altitude, lines


def simulate_survey(heightmap: Heightmap, plan: SurveyPlan, sonar: SonarConfig, sim: SimulatorConfig,
                    seed: int, threads: int = 1) -> Tuple[List[TrajectoryPoint], List[Ping]]:
    """Ground-truth trajectory and pings whose ``dr_pose`` is still the truth."""
    truth, altitude, lines = simulate_trajectory(heightmap, plan)

    def one(k: int) -> Ping:
        point = truth[k]
        return simulate_ping(point.ping_id, point.time, point.pose, float(altitude[k]), heightmap,
                             sonar, sim, seed, int(lines[k]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            pings = list(executor.map(one, range(len(truth))))
    else:
        pings = [one(k) for k in range(len(truth))]
    surveyed = sum(1 for line in lines if line != TURN_LINE)
    logger.info(f"Simulated {len(pings)} pings ({surveyed} on survey lines) with {threads} thread(s)")
    return truth, pings
