"""Rays of canonical-image pixels and their intersections with the reference seafloor."""

from dataclasses import replace
from typing import Dict, Sequence, Tuple

import numpy as np

from src.association.keypoint import Keypoint
from src.config.pipeline_config import SonarConfig
from src.geometry.pose import Pose
from src.simulator.heightmap import Heightmap
from src.simulator.raycast import raycast_batch
from src.sonar.ping import Ping
from src.sonar.sonar_image import SonarImage, georeference


def pixel_rays(sides: Sequence[str], cols: np.ndarray, ping_ids: Sequence[int], pings: Dict[int, Ping],
               poses: Dict[int, Pose], sonar: SonarConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Sensor origins and unit directions of canonical pixels.

    The ray lies in the ping's across-track plane at the slant range implied
    by the ground range and altitude (flat floor), i.e. depressed by
    asin(altitude / slant range).
    """
    offset = sonar.sensor_offset_pose()
    n = len(ping_ids)
    origins = np.empty((n, 3))
    directions = np.empty((n, 3))
    ground = (np.asarray(cols, dtype=float) + 0.5) * sonar.canonical_resolution
    for k, (side, pid) in enumerate(zip(sides, ping_ids)):
        sensor = poses[pid] * offset
        height = pings[pid].altitude - offset.position[2]
        r = np.hypot(ground[k], height)
        sign = 1.0 if side == "port" else -1.0
        origins[k] = sensor.position
        directions[k] = sensor.rotation @ np.array([0.0, sign * ground[k] / r, height / r])
    return origins, directions


def project_keypoints(keypoints: Sequence[Keypoint], pings: Dict[int, Ping], poses: Dict[int, Pose],
                      heightmap: Heightmap, sonar: SonarConfig) -> np.ndarray:
    """Seafloor intersection of each keypoint's ray; NaN rows for misses."""
    if not keypoints:
        return np.zeros((0, 3))
    origins, directions = pixel_rays(
        [k.side for k in keypoints], np.array([k.col for k in keypoints]),
        [k.ping_id for k in keypoints], pings, poses, sonar,
    )
    return raycast_batch(origins, directions, heightmap)


def reference_image(image: SonarImage, pings: Dict[int, Ping], poses: Dict[int, Pose],
                    sonar: SonarConfig) -> SonarImage:
    """The canonical image geo-referenced with the given poses instead of dead reckoning."""
    moved = {pid: pings[pid].with_pose(poses[pid]) for pid in image.rows}
    return georeference(replace(image, georef=None), moved, sonar.sensor_offset_pose())
