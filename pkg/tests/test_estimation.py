import numpy as np
import pytest

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import EstimationConfig, PipelineConfig, SonarConfig
from src.estimation.measurement import (
    KeypointMeasurement,
    check_jacobians,
    keypoint_measurement,
    measurement_covariance,
    odometry_covariance,
    predict_measurement,
)
from src.estimation.relative_pose import (
    LandmarkEstimate,
    estimate_constraints,
    estimate_relative_pose,
    init_landmark,
)
from src.geometry.pose import Pose, relative
from src.pose_graph.pose_graph import PoseGraph
from src.sonar.ping import Ping
from src.utils.errors import EstimationError
from tests.helpers import make_ping, make_pose

SONAR = SonarConfig()
POSE_I = make_pose(0.0, 0.0, 0.0, yaw_deg=90.0)
POSE_J = make_pose(20.0, 0.0, 0.5, yaw_deg=-90.0)
LANDMARK = np.array([10.0, 0.0, 15.0])


def measurement(ping_id, pose, landmark=LANDMARK):
    r = float(np.linalg.norm(landmark - pose.position))
    return KeypointMeasurement(ping_id, r, measurement_covariance(r, SONAR), "starboard")


def solve(cfg, landmark, pose_j_start=POSE_J, meas_i=None, meas_j=None):
    return estimate_relative_pose(
        None, POSE_I, pose_j_start, relative(POSE_I, POSE_J),
        meas_i or measurement(0, POSE_I), meas_j or measurement(1, POSE_J), landmark, cfg, SONAR,
    )


def test_measurement_of_point_in_ping_plane():
    z = predict_measurement(POSE_I, Pose.identity(), LANDMARK)
    np.testing.assert_allclose(z, [np.hypot(10.0, 15.0), 0.0], atol=1e-12)
    # one meter ahead of the ping plane
    z = predict_measurement(POSE_I, Pose.identity(), LANDMARK + [0.0, 1.0, 0.0])
    assert z[1] == pytest.approx(1.0)


def test_jacobians_match_central_differences():
    rng = np.random.default_rng(11)
    offsets = [Pose.identity(), Pose.from_xyz_rpy(0.4, -0.2, 0.3, 2.0, 10.0, -3.0)]
    for _ in range(100):
        pose = Pose.from_xyz_rpy(*rng.uniform(-50, 50, 2), rng.uniform(0, 100),
                                 *rng.uniform(-10, 10, 2), rng.uniform(-180, 180))
        landmark = pose.transform_point([rng.uniform(-5, 5), rng.uniform(-80, 80), rng.uniform(5, 40)])
        for offset in offsets:
            assert check_jacobians(pose, landmark, offset) < 1e-5


def test_covariance_models():
    cov = measurement_covariance(100.0, SonarConfig(range_std=0.5, beam_width=0.005))
    np.testing.assert_allclose(np.diag(cov), [0.25, 0.25])
    with pytest.raises(EstimationError):
        measurement_covariance(0.0, SONAR)
    cfg = EstimationConfig()
    still = odometry_covariance(0.0, cfg)
    np.testing.assert_allclose(np.diag(still), cfg.min_variance)
    moved = odometry_covariance(100.0, cfg)
    np.testing.assert_allclose(np.diag(moved)[3:], 0.1)


def test_measurement_rejects_bad_values():
    with pytest.raises(EstimationError):
        KeypointMeasurement(0, -1.0, np.eye(2), "port")
    with pytest.raises(EstimationError):
        KeypointMeasurement(0, 5.0, -np.eye(2), "port")


def test_keypoint_measurement_uses_flat_floor_range():
    ping = Ping(3, 0.0, POSE_I, 20.0, np.ones(4), np.ones(4))
    kp = Keypoint("img", 0, 19, "starboard", np.zeros(3), ping_id=3)
    m = keypoint_measurement(kp, ping, SonarConfig(canonical_resolution=0.5))
    assert m.slant_range == pytest.approx(np.hypot(9.75, 20.0))
    np.testing.assert_allclose(m.value, [m.slant_range, 0.0])


def test_exact_measurements_recover_relative_pose():
    cfg = EstimationConfig(depth_prior=False)
    start = POSE_J * Pose.exp([0.002, -0.001, 0.003, 0.05, -0.04, 0.02])
    landmark = LandmarkEstimate([10.5, 0.5, 14.5], 15.0, 1.0)
    constraint = solve(cfg, landmark, pose_j_start=start)
    assert constraint.converged
    assert constraint.rejected is None
    np.testing.assert_allclose(constraint.relative_pose.matrix(), relative(POSE_I, POSE_J).matrix(), atol=1e-4)
    np.testing.assert_allclose(constraint.landmark, LANDMARK, atol=1e-3)
    assert np.all(constraint.eigenvalues > 0)
    np.testing.assert_allclose(constraint.covariance, constraint.covariance.T)


def test_depth_prior_resolves_mirror_ambiguity():
    landmark = LandmarkEstimate([10.0, 0.0, -1.0], 15.0, 1.0)
    with_prior = solve(EstimationConfig(depth_prior=True), landmark)
    without_prior = solve(EstimationConfig(depth_prior=False), landmark)
    assert with_prior.landmark[2] > 0.0
    assert without_prior.landmark[2] < 0.0


def test_inconsistent_ranges_are_rejected():
    cov = measurement_covariance(5.0, SONAR)
    constraint = solve(
        EstimationConfig(depth_prior=False), LandmarkEstimate(LANDMARK, 15.0, 1.0),
        meas_i=KeypointMeasurement(0, 5.0, cov, "starboard"), meas_j=KeypointMeasurement(1, 5.0, cov, "starboard"),
    )
    assert not constraint.converged
    assert constraint.rejected is not None


def test_landmark_estimate_validation():
    with pytest.raises(EstimationError):
        LandmarkEstimate([0.0, 0.0, np.nan], 10.0, 1.0)
    with pytest.raises(EstimationError):
        LandmarkEstimate([0.0, 0.0, 10.0], 10.0, 0.0)


def two_pings():
    landmark = np.array([9.75, 0.0, 15.0])
    pose_j = make_pose(19.5, 0.0, 0.5, yaw_deg=-90.0)
    pings = {
        0: Ping(0, 0.0, POSE_I, 15.0, np.ones(4), np.ones(4)),
        1: Ping(1, 10.0, pose_j, 14.5, np.ones(4), np.ones(4)),
    }
    kp_i = Keypoint("line0_starboard", 0, 19, "starboard", landmark.copy(), ping_id=0)
    kp_j = Keypoint("line1_starboard", 0, 19, "starboard", landmark.copy(), ping_id=1)
    return pings, kp_i, kp_j


def test_init_landmark_uses_nearer_ping():
    pings, kp_i, kp_j = two_pings()
    far = Keypoint(kp_j.image_id, 0, 19, "starboard", np.array([13.75, 0.0, 15.0]), ping_id=1)
    estimate = init_landmark(kp_i, far, pings, EstimationConfig(depth_prior_scale=0.05, depth_prior_min_std=0.1))
    np.testing.assert_allclose(estimate.position, [11.75, 0.0, 15.0])
    # ping 1 is 7.75 m away, ping 0 is 11.75 m away
    assert estimate.prior_mean == pytest.approx(0.5 + 14.5)
    assert estimate.prior_std == pytest.approx(0.05 * 7.75)


def test_estimate_constraints_keeps_input_order():
    pings, kp_i, kp_j = two_pings()
    cfg = PipelineConfig(sonar=SonarConfig(canonical_resolution=0.5))
    corrs = [Correspondence(kp_i, kp_j, 0.1), Correspondence(kp_j, kp_i, 0.1)]
    constraints = estimate_constraints(corrs, pings, cfg, threads=2)
    assert [(c.ping_i, c.ping_j) for c in constraints] == [(0, 1), (1, 0)]
    assert all(c.converged for c in constraints)
    np.testing.assert_allclose(constraints[0].relative_pose.matrix(),
                               relative(pings[0].dr_pose, pings[1].dr_pose).matrix(), atol=1e-6)


def test_landmark_on_sensor_is_rejected_not_raised():
    landmark = LandmarkEstimate(POSE_J.position.copy(), 15.0, 1.0)
    constraint = solve(EstimationConfig(depth_prior=False), landmark)
    assert not constraint.converged
    assert constraint.rejected.startswith("solve failed")
    assert np.isnan(constraint.covariance).all()

    graph = PoseGraph()
    graph.add_odometry_chain([make_ping(0, POSE_I), make_ping(1, POSE_J, time=1.0)])
    assert graph.add_loop_closure(constraint) is None
    assert graph.loop_closure_count() == 0


def solve_pair(cfg, pose_i, pose_j, landmark, start_j, start_landmark, prior_mean, prior_std=1.0, noise=None):
    ranges = [float(np.linalg.norm(landmark - p.position)) for p in (pose_i, pose_j)]
    if noise is not None:
        ranges = [r + noise.normal(0.0, SONAR.range_std) for r in ranges]
    meas = [KeypointMeasurement(k, r, measurement_covariance(r, SONAR), "starboard") for k, r in enumerate(ranges)]
    return estimate_relative_pose(
        None, pose_i, start_j, relative(pose_i, pose_j), meas[0], meas[1],
        LandmarkEstimate(start_landmark, prior_mean, prior_std), cfg, SONAR,
    )


def random_pair(seed):
    """Two pings of crossing lines whose ping planes both contain one seafloor point."""
    rng = np.random.default_rng(seed)
    yaw_i = rng.uniform(-180.0, 180.0)
    pose_i = make_pose(*rng.uniform(-50.0, 50.0, 2), rng.uniform(0.0, 5.0), yaw_deg=yaw_i,
                       roll_deg=rng.uniform(-3.0, 3.0), pitch_deg=rng.uniform(-3.0, 3.0))
    landmark = pose_i.transform_point([0.0, rng.choice([-1.0, 1.0]) * rng.uniform(10.0, 60.0), rng.uniform(12.0, 25.0)])
    rotation_j = make_pose(yaw_deg=yaw_i + 180.0 + rng.uniform(-30.0, 30.0),
                           roll_deg=rng.uniform(-3.0, 3.0), pitch_deg=rng.uniform(-3.0, 3.0)).rotation
    in_plane = np.array([0.0, rng.choice([-1.0, 1.0]) * rng.uniform(10.0, 60.0), rng.uniform(12.0, 25.0)])
    pose_j = Pose.from_rt(rotation_j, landmark - rotation_j @ in_plane)
    start_j = pose_j * Pose.exp(np.concatenate([rng.normal(0.0, 0.002, 3), rng.normal(0.0, 0.05, 3)]))
    start_landmark = landmark + rng.normal(0.0, 0.5, 3)
    return pose_i, pose_j, np.asarray(landmark), start_j, start_landmark


@pytest.mark.parametrize("seed", range(100))
def test_exact_measurements_recover_random_geometry(seed):
    pose_i, pose_j, landmark, start_j, start_landmark = random_pair(seed)
    c = solve_pair(EstimationConfig(depth_prior=False), pose_i, pose_j, landmark, start_j, start_landmark,
                   prior_mean=float(landmark[2]))
    assert c.converged, c.rejected
    error = (relative(pose_i, pose_j).inverse() * c.relative_pose).log()
    assert np.linalg.norm(error[:3]) < 1e-8
    assert np.linalg.norm(error[3:]) < 1e-6
    assert c.cost < 1e-10


def coplanar_pair(rng):
    """Opposing pings in one vertical plane: the two range circles meet above and below the vehicles."""
    north = rng.uniform(-100.0, 100.0)
    x_i = rng.uniform(-5.0, 5.0)
    separation = rng.uniform(15.0, 40.0)
    pose_i = make_pose(x_i, north, rng.uniform(0.0, 2.0), yaw_deg=90.0)
    pose_j = make_pose(x_i + separation, north, rng.uniform(0.0, 2.0), yaw_deg=-90.0)
    landmark = np.array([x_i + rng.uniform(0.3, 0.7) * separation, north, rng.uniform(12.0, 25.0)])
    return pose_i, pose_j, landmark


@pytest.mark.parametrize("seed", range(100))
def test_depth_prior_picks_seafloor_on_two_circle_geometry(seed):
    pose_i, pose_j, landmark = coplanar_pair(np.random.default_rng(seed))
    top = min(pose_i.position[2], pose_j.position[2])
    above = np.array([0.5 * (pose_i.position[0] + pose_j.position[0]), landmark[1], top - 1.0])
    with_prior = solve_pair(EstimationConfig(depth_prior=True), pose_i, pose_j, landmark, pose_j, above,
                            prior_mean=float(landmark[2]))
    without_prior = solve_pair(EstimationConfig(depth_prior=False), pose_i, pose_j, landmark, pose_j, above,
                               prior_mean=float(landmark[2]))
    assert with_prior.converged
    np.testing.assert_allclose(with_prior.landmark, landmark, atol=1e-3)
    assert without_prior.landmark[2] < top


def test_depth_prior_reduces_landmark_depth_error_on_noisy_ranges():
    rng = np.random.default_rng(5)
    errors = {True: [], False: []}
    for _ in range(120):
        pose_i, pose_j, landmark = coplanar_pair(rng)
        start = landmark + [rng.normal(0.0, 1.0), 0.0, 0.0]
        noise_seed = int(rng.integers(1 << 31))
        for use_prior in (True, False):
            c = solve_pair(EstimationConfig(depth_prior=use_prior), pose_i, pose_j, landmark, pose_j, start,
                           prior_mean=float(landmark[2]), prior_std=0.3, noise=np.random.default_rng(noise_seed))
            errors[use_prior].append(abs(c.landmark[2] - landmark[2]))
    assert np.mean(errors[True]) < np.mean(errors[False])
