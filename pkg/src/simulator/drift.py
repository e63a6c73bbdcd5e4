"""Dead-reckoning drift injected along a ground-truth trajectory."""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.config.pipeline_config import DriftConfig
from src.geometry.pose import Pose
from src.geometry.trajectory import TrajectoryPoint
from src.sonar.ping import Ping
from src.utils.logger import logger

DriftModel = DriftConfig


@dataclass(frozen=True)
class DriftReport:
    final_error: float  # horizontal, meters
    distance: float
    heading_rate_bias: float
    velocity_bias: Tuple[float, float]

    @property
    def percent(self) -> float:
        return 100.0 * self.final_error / self.distance if self.distance > 0 else 0.0


def path_length(trajectory: Sequence[TrajectoryPoint]) -> float:
    positions = np.array([p.pose.position[:2] for p in trajectory])
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1))) if len(positions) > 1 else 0.0


def inject_drift(truth: Sequence[TrajectoryPoint], model: DriftModel,
                 seed: int) -> Tuple[List[TrajectoryPoint], DriftReport]:
    """Integrate a biased, noisy heading rate and body-frame velocity along the truth.

    The heading-rate bias is drawn once from a zero-mean normal with the
    configured std. The velocity bias has the configured magnitude in a
    random body-frame direction. White noise is a random walk with the
    configured std per sqrt(second). Depth, roll and pitch are taken from the truth, as
    an AUV measures them directly.
    """
    truth = list(truth)
    distance = path_length(truth)
    if model.is_zero or len(truth) < 2:
        return list(truth), DriftReport(0.0, distance, 0.0, (0.0, 0.0))

    rng = np.random.default_rng(seed)
    heading_bias = rng.normal(0.0, model.heading_rate_bias_std)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    velocity_bias = model.velocity_bias_std * np.array([np.cos(angle), np.sin(angle)])

    rpy = np.array([p.pose.to_xyz_rpy(degrees=False)[3:] for p in truth])
    positions = np.array([p.pose.position for p in truth])
    times = np.array([p.time for p in truth])

    dr_xy = positions[0, :2].copy()
    dr_yaw = rpy[0, 2]
    dr = [truth[0]]
    for k in range(1, len(truth)):
        dt = max(times[k] - times[k - 1], 0.0)
        true_yaw = rpy[k - 1, 2]
        c, s = np.cos(true_yaw), np.sin(true_yaw)
        step = positions[k, :2] - positions[k - 1, :2]
        body_step = np.array([c * step[0] + s * step[1], -s * step[0] + c * step[1]])
        body_step = body_step + velocity_bias * dt + model.velocity_noise_std * np.sqrt(dt) * rng.standard_normal(2)

        c, s = np.cos(dr_yaw), np.sin(dr_yaw)
        dr_xy = dr_xy + np.array([c * body_step[0] - s * body_step[1], s * body_step[0] + c * body_step[1]])
        yaw_step = np.angle(np.exp(1j * (rpy[k, 2] - rpy[k - 1, 2])))
        dr_yaw = dr_yaw + yaw_step + heading_bias * dt + model.heading_rate_noise_std * np.sqrt(dt) * rng.standard_normal()

        pose = Pose.from_xyz_rpy(dr_xy[0], dr_xy[1], positions[k, 2], rpy[k, 0], rpy[k, 1], dr_yaw, degrees=False)
        dr.append(TrajectoryPoint(truth[k].ping_id, truth[k].time, pose))

    final_error = float(np.linalg.norm(dr[-1].pose.position[:2] - truth[-1].pose.position[:2]))
    report = DriftReport(final_error, distance, float(heading_bias), tuple(float(v) for v in velocity_bias))
    logger.info(
        f"Injected drift: final error {final_error:.2f} m over {distance:.0f} m ({report.percent:.3f}% of distance)"
    )
    return dr, report


def apply_trajectory(pings: Sequence[Ping], trajectory: Sequence[TrajectoryPoint]) -> List[Ping]:
    """Pings with their ``dr_pose`` replaced by the matching trajectory pose."""
    poses = {p.ping_id: p.pose for p in trajectory}
    return [p.with_pose(poses[p.ping_id]) for p in pings]
