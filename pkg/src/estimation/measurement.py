"""Keypoint measurement model: slant range and offset from the ping plane."""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src.association.keypoint import Keypoint
from src.config.pipeline_config import EstimationConfig, SonarConfig
from src.geometry.pose import Pose, skew
from src.sonar.ping import Ping
from src.utils.errors import EstimationError

FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class KeypointMeasurement:
    ping_id: int
    slant_range: float
    covariance: np.ndarray  # 2x2
    side: str

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        if not self.slant_range > 0:
            raise EstimationError(f"Ping {self.ping_id}: slant range must be positive, got {self.slant_range}")
        if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise EstimationError(f"Ping {self.ping_id}: measurement covariance is not positive definite")
        object.__setattr__(self, "covariance", cov)

    @property
    def value(self) -> np.ndarray:
        """The measured (range, plane offset); a keypoint lies in its ping plane."""
        return np.array([self.slant_range, 0.0])


def measurement_covariance(r: float, cfg: SonarConfig) -> np.ndarray:
    """Range variance plus an across-beam variance that grows with range squared."""
    if not r > 0:
        raise EstimationError(f"Range must be positive, got {r}")
    return np.diag([cfg.range_std**2, (r * cfg.beam_width) ** 2])


def odometry_covariance(distance: float, cfg: EstimationConfig) -> np.ndarray:
    """Dead-reckoning uncertainty proportional to the distance travelled, floored at ``min_variance``."""
    d = max(float(distance), 0.0)
    rot = max(cfg.odometry_rotation_scale * d, cfg.min_variance)
    trans = max(cfg.odometry_translation_scale * d, cfg.min_variance)
    return np.diag([rot, rot, rot, trans, trans, trans])


def keypoint_measurement(kp: Keypoint, ping: Ping, sonar: SonarConfig) -> KeypointMeasurement:
    """Slant range of a canonical-image keypoint under the flat-floor assumption."""
    ground = (kp.col + 0.5) * sonar.canonical_resolution
    height = ping.altitude - sonar.sensor_offset[2]
    r = float(np.hypot(ground, height))
    return KeypointMeasurement(ping.ping_id, r, measurement_covariance(r, sonar), kp.side)


def _sensor_point(pose: Pose, sensor_offset: Pose, landmark: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    body = pose.rotation.T @ (np.asarray(landmark, dtype=float) - pose.position)
    return body, sensor_offset.rotation.T @ (body - sensor_offset.position)


def predict_measurement(pose: Pose, sensor_offset: Pose, landmark: Sequence[float]) -> np.ndarray:
    _, s = _sensor_point(pose, sensor_offset, landmark)
    r = np.linalg.norm(s)
    if r < 1e-9:
        raise EstimationError("Landmark coincides with the sensor origin")
    return np.array([r, s[0]])


def measurement_jacobians(pose: Pose, sensor_offset: Pose,
                          landmark: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``predict_measurement`` w.r.t. a right perturbation of the pose (2x6) and the landmark (2x3)."""
    body, s = _sensor_point(pose, sensor_offset, landmark)
    r = np.linalg.norm(s)
    if r < 1e-9:
        raise EstimationError("Landmark coincides with the sensor origin")
    dh_ds = np.vstack([s / r, [1.0, 0.0, 0.0]])
    Rs_T = sensor_offset.rotation.T
    ds_dpose = Rs_T @ np.hstack([skew(body), -np.eye(3)])
    ds_dx = Rs_T @ pose.rotation.T
    return dh_ds @ ds_dpose, dh_ds @ ds_dx


def check_jacobians(pose: Pose, landmark: Sequence[float], sensor_offset: Optional[Pose] = None,
                    step: float = FD_STEP) -> float:
    """Largest error of the analytic Jacobians against central differences, relative to each Jacobian's scale."""
    offset = sensor_offset or Pose.identity()
    landmark = np.asarray(landmark, dtype=float)
    J_pose, J_x = measurement_jacobians(pose, offset, landmark)

    num_pose = np.zeros((2, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = step
        plus = predict_measurement(pose * Pose.exp(d), offset, landmark)
        minus = predict_measurement(pose * Pose.exp(-d), offset, landmark)
        num_pose[:, k] = (plus - minus) / (2 * step)

    num_x = np.zeros((2, 3))
    for k in range(3):
        d = np.zeros(3)
        d[k] = step
        num_x[:, k] = (predict_measurement(pose, offset, landmark + d)
                       - predict_measurement(pose, offset, landmark - d)) / (2 * step)

    errors = [
        np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1.0)
        for analytic, numeric in ((J_pose, num_pose), (J_x, num_x))
    ]
    return float(max(errors))
