"""Two-ping loop-closure estimation.

Each correspondence links two pings observing one seafloor landmark. The
source ping is held fixed; the target pose and the landmark are solved for
from the two keypoint measurements, the dead-reckoning odometry between the
pings and, optionally, a depth prior on the landmark.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import EstimationConfig, PipelineConfig, SonarConfig
from src.estimation.measurement import (
    KeypointMeasurement,
    keypoint_measurement,
    measurement_jacobians,
    odometry_covariance,
    predict_measurement,
)
from src.geometry.pose import Pose, relative, se3_right_jacobian_inverse
from src.optim import LMSettings, levenberg_marquardt
from src.sonar.ping import Ping
from src.utils.errors import EstimationError
from src.utils.logger import logger


@dataclass(frozen=True, eq=False)
class LandmarkEstimate:
    position: np.ndarray
    prior_mean: float
    prior_std: float

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        if not (np.all(np.isfinite(position)) and np.isfinite(self.prior_mean)):
            raise EstimationError("Landmark estimate must be finite")
        if not self.prior_std > 0:
            raise EstimationError(f"Depth prior std must be positive, got {self.prior_std}")
        object.__setattr__(self, "position", position)


@dataclass(frozen=True, eq=False)
class LoopClosureConstraint:
    ping_i: int
    ping_j: int
    relative_pose: Pose
    covariance: np.ndarray  # 6x6, twist order (rotation, translation)
    converged: bool
    cost: float
    initial_cost: float = np.nan
    iterations: int = 0
    landmark: Optional[np.ndarray] = None
    rejected: Optional[str] = None

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.covariance + self.covariance.T))

    @property
    def information(self) -> np.ndarray:
        return np.linalg.inv(self.covariance)


def rejected_constraint(ping_i: int, ping_j: int, relative_pose: Pose, reason: str,
                        landmark: Optional[np.ndarray] = None) -> LoopClosureConstraint:
    """A constraint whose solve failed outright; the pose graph never adds it."""
    return LoopClosureConstraint(ping_i, ping_j, relative_pose, np.full((6, 6), np.nan), converged=False,
                                 cost=np.nan, landmark=landmark, rejected=reason)


def init_landmark(src_kp: Keypoint, tgt_kp: Keypoint, pings: Dict[int, Ping],
                  cfg: Optional[EstimationConfig] = None) -> LandmarkEstimate:
    """Landmark at the midpoint of the two geo-references, depth prior from the nearer ping.

    The prior mean is the seafloor depth under the nearer ping (vehicle depth
    plus altitude); its std grows with the horizontal distance to that ping.
    """
    cfg = cfg or EstimationConfig()
    xy = 0.5 * (np.asarray(src_kp.geo[:2], dtype=float) + np.asarray(tgt_kp.geo[:2], dtype=float))
    candidates = [pings[src_kp.ping_id], pings[tgt_kp.ping_id]]
    distances = [float(np.linalg.norm(p.dr_pose.position[:2] - xy)) for p in candidates]
    k = int(np.argmin(distances))
    nearer = candidates[k]
    mean = float(nearer.dr_pose.position[2] + nearer.altitude)
    std = max(cfg.depth_prior_scale * distances[k], cfg.depth_prior_min_std)
    return LandmarkEstimate(np.array([xy[0], xy[1], mean]), mean, std)


class _TwoPingProblem:
    """Whitened residuals and Jacobian over the state (target pose, landmark)."""

    def __init__(self, pose_i: Pose, odometry: Pose, odometry_cov: np.ndarray,
                 meas_i: KeypointMeasurement, meas_j: KeypointMeasurement,
                 landmark: LandmarkEstimate, sensor_offset: Pose, use_depth_prior: bool):
        self.pose_i = pose_i
        self.odometry_inv = odometry.inverse()
        self.odometry_std = np.sqrt(np.diag(odometry_cov))
        self.meas = (meas_i, meas_j)
        self.meas_std = [np.sqrt(np.diag(m.covariance)) for m in self.meas]
        self.landmark = landmark
        self.offset = sensor_offset
        self.use_depth_prior = use_depth_prior

    @property
    def size(self) -> int:
        return 11 if self.use_depth_prior else 10

    def _odometry_error(self, pose_j: Pose) -> np.ndarray:
        return (self.odometry_inv * relative(self.pose_i, pose_j)).log()

    def residuals(self, state: Tuple[Pose, np.ndarray]) -> np.ndarray:
        pose_j, x = state
        r = np.empty(self.size)
        for k, (pose, m, std) in enumerate(zip((self.pose_i, pose_j), self.meas, self.meas_std)):
            r[2 * k: 2 * k + 2] = (predict_measurement(pose, self.offset, x) - m.value) / std
        r[4:10] = self._odometry_error(pose_j) / self.odometry_std
        if self.use_depth_prior:
            r[10] = (x[2] - self.landmark.prior_mean) / self.landmark.prior_std
        return r

    def linearize(self, state: Tuple[Pose, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        pose_j, x = state
        J = np.zeros((self.size, 9))
        _, Jx_i = measurement_jacobians(self.pose_i, self.offset, x)
        Jpose_j, Jx_j = measurement_jacobians(pose_j, self.offset, x)
        J[0:2, 6:9] = Jx_i / self.meas_std[0][:, None]
        J[2:4, 0:6] = Jpose_j / self.meas_std[1][:, None]
        J[2:4, 6:9] = Jx_j / self.meas_std[1][:, None]
        J[4:10, 0:6] = se3_right_jacobian_inverse(self._odometry_error(pose_j))[0] / self.odometry_std[:, None]
        if self.use_depth_prior:
            J[10, 8] = 1.0 / self.landmark.prior_std
        return self.residuals(state), J

    @staticmethod
    def retract(state: Tuple[Pose, np.ndarray], dx: np.ndarray) -> Tuple[Pose, np.ndarray]:
        pose_j, x = state
        return pose_j * Pose.exp(dx[:6]), x + dx[6:]


def estimate_relative_pose(corr: Correspondence, pose_i: Pose, pose_j: Pose, odometry: Pose,
                           meas_i: KeypointMeasurement, meas_j: KeypointMeasurement,
                           landmark: LandmarkEstimate, cfg: EstimationConfig,
                           sonar: Optional[SonarConfig] = None) -> LoopClosureConstraint:
    """Solve one correspondence for the relative pose between its pings.

    ``pose_i`` stays fixed. The returned covariance is the target-pose block
    of the inverse Gauss-Newton Hessian at the solution. A constraint that
    did not converge, has a singular Hessian or leaves a whitened keypoint
    residual beyond ``outlier_sigma`` comes back with ``converged=False``.
    """
    sonar = sonar or SonarConfig()
    distance = float(np.linalg.norm(odometry.position))
    problem = _TwoPingProblem(
        pose_i, odometry, odometry_covariance(distance, cfg), meas_i, meas_j, landmark,
        sonar.sensor_offset_pose(), cfg.depth_prior,
    )
    settings = LMSettings(max_iterations=cfg.max_iterations, ftol=cfg.ftol, gtol=cfg.gtol)
    ping_i, ping_j = meas_i.ping_id, meas_j.ping_id
    try:
        result = levenberg_marquardt(
            (pose_j, landmark.position.copy()), problem.linearize, problem.residuals, problem.retract,
            settings=settings, keep_hessian=True,
        )
    except (EstimationError, np.linalg.LinAlgError) as e:
        logger.warning(f"Constraint {ping_i}->{ping_j} rejected: solve failed ({e})")
        return rejected_constraint(ping_i, ping_j, odometry, f"solve failed: {e}", landmark.position.copy())
    solved_pose, solved_landmark = result.state

    rejected = None
    covariance = np.full((6, 6), np.nan)
    try:
        full = np.linalg.inv(result.hessian)
        covariance = 0.5 * (full[:6, :6] + full[:6, :6].T)
        if np.any(np.linalg.eigvalsh(covariance) <= 0):
            rejected = "covariance not positive definite"
    except np.linalg.LinAlgError:
        rejected = "singular hessian"

    if rejected is None and not (result.converged and result.final_cost <= result.initial_cost):
        rejected = f"not converged ({result.reason})"
    if rejected is None:
        residuals = problem.residuals(result.state)[:4]
        if np.max(np.abs(residuals)) > cfg.outlier_sigma:
            rejected = "measurement residual beyond outlier gate"
    if rejected:
        logger.debug(f"Constraint {ping_i}->{ping_j} rejected: {rejected}")

    return LoopClosureConstraint(
        ping_i=ping_i,
        ping_j=ping_j,
        relative_pose=relative(pose_i, solved_pose),
        covariance=covariance,
        converged=rejected is None,
        cost=result.final_cost,
        initial_cost=result.initial_cost,
        iterations=result.iterations,
        landmark=solved_landmark,
        rejected=rejected,
    )


def estimate_correspondence(corr: Correspondence, pings: Dict[int, Ping], cfg: PipelineConfig,
                            estimation: Optional[EstimationConfig] = None,
                            poses: Optional[Dict[int, Pose]] = None) -> LoopClosureConstraint:
    """Build and solve the two-ping problem of one correspondence.

    Poses default to dead reckoning; ``poses`` substitutes others (e.g. a
    reference trajectory) by ping id.
    """
    estimation = estimation or cfg.estimation
    src, tgt = corr.source, corr.target
    ping_i, ping_j = pings[src.ping_id], pings[tgt.ping_id]
    pose_i = poses[ping_i.ping_id] if poses else ping_i.dr_pose
    pose_j = poses[ping_j.ping_id] if poses else ping_j.dr_pose
    odometry = relative(pose_i, pose_j)
    try:
        meas_i = keypoint_measurement(src, ping_i, cfg.sonar)
        meas_j = keypoint_measurement(tgt, ping_j, cfg.sonar)
        landmark = init_landmark(src, tgt, pings, estimation)
    except EstimationError as e:
        logger.warning(f"Constraint {ping_i.ping_id}->{ping_j.ping_id} rejected: {e}")
        return rejected_constraint(ping_i.ping_id, ping_j.ping_id, odometry, str(e))
    return estimate_relative_pose(corr, pose_i, pose_j, odometry, meas_i, meas_j, landmark, estimation, cfg.sonar)


def estimate_constraints(correspondences: Sequence[Correspondence], pings: Dict[int, Ping],
                         cfg: PipelineConfig, threads: int = 1,
                         estimation: Optional[EstimationConfig] = None,
                         poses: Optional[Dict[int, Pose]] = None) -> List[LoopClosureConstraint]:
    """Estimate every correspondence independently; output order follows the input."""

    def solve(corr: Correspondence) -> LoopClosureConstraint:
        return estimate_correspondence(corr, pings, cfg, estimation, poses)

    if threads > 1 and len(correspondences) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            constraints = list(executor.map(solve, correspondences))
    else:
        constraints = [solve(c) for c in correspondences]

    accepted = sum(c.converged for c in constraints)
    logger.info(f"Estimated {len(constraints)} loop-closure constraints, {accepted} accepted")
    return constraints
