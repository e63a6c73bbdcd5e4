# Geometry Package
from src.geometry.pose import Pose, Twist, compose, exp, inverse, log, relative, transform_point
from src.geometry.trajectory import TrajectoryPoint, pose_dict, replace_poses, trajectory_from_pings

__all__ = [
    "Pose", "Twist", "compose", "exp", "inverse", "log", "relative", "transform_point",
    "TrajectoryPoint", "pose_dict", "replace_poses", "trajectory_from_pings",
]
