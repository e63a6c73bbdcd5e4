# Estimation Package
from src.estimation.measurement import (
    KeypointMeasurement,
    check_jacobians,
    keypoint_measurement,
    measurement_covariance,
    measurement_jacobians,
    odometry_covariance,
    predict_measurement,
)
from src.estimation.relative_pose import (
    LandmarkEstimate,
    LoopClosureConstraint,
    estimate_constraints,
    estimate_correspondence,
    estimate_relative_pose,
    init_landmark,
)
