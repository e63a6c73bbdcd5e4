from typing import List

import numpy as np

from src.geometry.pose import Pose
from src.sonar.ping import Ping

FLOOR_DEPTH = 20.0


def make_pose(x=0.0, y=0.0, z=0.0, yaw_deg=90.0, roll_deg=0.0, pitch_deg=0.0) -> Pose:
    return Pose.from_xyz_rpy(x, y, z, roll_deg, pitch_deg, yaw_deg)


def make_ping(ping_id: int, pose: Pose, altitude: float = FLOOR_DEPTH, bins: int = 8, time=None, line=None) -> Ping:
    return Ping(ping_id, float(ping_id if time is None else time), pose, altitude, np.ones(bins), np.ones(bins), line)


def straight_line(first_id: int, x: float, ys, yaw_deg: float, line=None, bins: int = 8) -> List[Ping]:
    """Pings along a north/south line at depth 0 over the flat fixture floor."""
    return [make_ping(first_id + k, make_pose(x, y, 0.0, yaw_deg), bins=bins, line=line) for k, y in enumerate(ys)]
