from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

from src.geometry.pose import Pose


@dataclass(frozen=True, eq=False)
class TrajectoryPoint:
    ping_id: int
    time: float
    pose: Pose


def trajectory_from_pings(pings: Iterable) -> List[TrajectoryPoint]:
    """Dead-reckoning trajectory carried by a ping sequence."""
    return [TrajectoryPoint(p.ping_id, p.time, p.dr_pose) for p in pings]


def pose_dict(trajectory: Sequence[TrajectoryPoint]) -> Dict[int, Pose]:
    return {point.ping_id: point.pose for point in trajectory}


def replace_poses(trajectory: Sequence[TrajectoryPoint], poses: Dict[int, Pose]) -> List[TrajectoryPoint]:
    """Same ids and times with the poses taken from ``poses`` where present."""
    return [TrajectoryPoint(p.ping_id, p.time, poses.get(p.ping_id, p.pose)) for p in trajectory]
