"""Seafloor-assisted reference correspondences.

A source keypoint is ray-cast onto the reference seafloor; the target pixel
whose own ray lands on (nearly) the same point is its baseline. Run over a
regular grid of source pixels the same search yields annotated
correspondences.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import EvaluationConfig, SonarConfig
from src.evaluation.projection import pixel_rays, project_keypoints
from src.geometry.pose import Pose
from src.simulator.heightmap import Heightmap
from src.simulator.raycast import raycast_batch
from src.sonar.ping import Ping
from src.sonar.sonar_image import SonarImage
from src.utils.logger import logger


class BaselineMatcher:
    """Target-side lookup for one reference-georeferenced canonical image."""

    def __init__(self, tgt_image: SonarImage, pings: Dict[int, Ping], poses: Dict[int, Pose],
                 heightmap: Heightmap, sonar: SonarConfig, cfg: Optional[EvaluationConfig] = None):
        self.image = tgt_image
        self.pings = pings
        self.poses = poses
        self.heightmap = heightmap
        self.sonar = sonar
        self.cfg = cfg or EvaluationConfig()
        valid = tgt_image.valid_mask()
        self._rows, self._cols = np.nonzero(valid)
        self._tree = cKDTree(tgt_image.georef[self._rows, self._cols, :2]) if self._rows.size else None

    def match(self, landmarks: np.ndarray) -> List[Optional[Keypoint]]:
        """Baseline target keypoint per seafloor landmark (NaN rows give ``None``)."""
        landmarks = np.atleast_2d(landmarks)
        results: List[Optional[Keypoint]] = [None] * len(landmarks)
        if self._tree is None or not len(landmarks):
            return results
        finite = np.isfinite(landmarks[:, 0])
        neighbours = [
            sorted(self._tree.query_ball_point(l[:2], self.cfg.baseline_search_radius)) if ok else []
            for l, ok in zip(landmarks, finite)
        ]
        owner = np.concatenate([np.full(len(n), k) for k, n in enumerate(neighbours)]).astype(int)
        flat = np.concatenate([np.asarray(n, dtype=int) for n in neighbours]).astype(int)
        if flat.size == 0:
            return results
        rows, cols = self._rows[flat], self._cols[flat]
        ping_ids = [self.image.rows[r] for r in rows]
        origins, directions = pixel_rays([self.image.side] * flat.size, cols, ping_ids,
                                         self.pings, self.poses, self.sonar)
        hits = raycast_batch(origins, directions, self.heightmap)
        distance = np.linalg.norm(hits - landmarks[owner], axis=1)
        distance[np.isnan(distance)] = np.inf

        threshold = self.cfg.baseline_threshold
        for k in np.unique(owner):
            members = np.flatnonzero(owner == k)
            best = members[np.argmin(distance[members])]
            d = distance[best]
            if d < threshold or d == 0.0:
                results[k] = Keypoint(self.image.image_id, int(rows[best]), int(cols[best]), self.image.side,
                                      hits[best].copy(), ping_id=ping_ids[best])
        return results


def baseline_correspondence(src_kp: Keypoint, poses: Dict[int, Pose], pings: Dict[int, Ping],
                            heightmap: Heightmap, tgt_image: SonarImage, sonar: SonarConfig,
                            cfg: Optional[EvaluationConfig] = None) -> Optional[Keypoint]:
    """Target pixel seeing the same seafloor point as ``src_kp`` (within the baseline threshold).

    ``tgt_image`` must be geo-referenced with ``poses``.
    """
    landmark = project_keypoints([src_kp], pings, poses, heightmap, sonar)
    return BaselineMatcher(tgt_image, pings, poses, heightmap, sonar, cfg).match(landmark)[0]


def baselines_for(detected: Sequence[Correspondence], images: Dict[str, SonarImage], pings: Dict[int, Ping],
                  poses: Dict[int, Pose], heightmap: Heightmap, sonar: SonarConfig,
                  cfg: Optional[EvaluationConfig] = None) -> List[Optional[Keypoint]]:
    """Baseline target keypoint of every detected correspondence, grouped per target image."""
    detected = list(detected)
    landmarks = project_keypoints([c.source for c in detected], pings, poses, heightmap, sonar)
    results: List[Optional[Keypoint]] = [None] * len(detected)
    by_target: Dict[str, List[int]] = {}
    for k, c in enumerate(detected):
        by_target.setdefault(c.target.image_id, []).append(k)
    for image_id, members in sorted(by_target.items()):
        matcher = BaselineMatcher(images[image_id], pings, poses, heightmap, sonar, cfg)
        for k, kp in zip(members, matcher.match(landmarks[members])):
            results[k] = kp
    return results


def annotate_correspondences(src_image: SonarImage, tgt_image: SonarImage, pings: Dict[int, Ping],
                             poses: Dict[int, Pose], heightmap: Heightmap, sonar: SonarConfig,
                             cfg: Optional[EvaluationConfig] = None) -> List[Correspondence]:
    """Reference correspondences on a regular grid of valid source pixels.

    Both images must be geo-referenced with ``poses``.
    """
    cfg = cfg or EvaluationConfig()
    spacing = cfg.annotation_spacing
    valid = src_image.valid_mask()
    rows, cols = np.meshgrid(np.arange(spacing // 2, src_image.shape[0], spacing),
                             np.arange(spacing // 2, src_image.shape[1], spacing), indexing="ij")
    rows, cols = rows.ravel(), cols.ravel()
    keep = valid[rows, cols]
    sources = [
        Keypoint(src_image.image_id, int(r), int(c), src_image.side, src_image.georef[r, c].copy(),
                 ping_id=src_image.rows[r])
        for r, c in zip(rows[keep], cols[keep])
    ]
    if not sources:
        return []
    landmarks = project_keypoints(sources, pings, poses, heightmap, sonar)
    targets = BaselineMatcher(tgt_image, pings, poses, heightmap, sonar, cfg).match(landmarks)
    annotated = [Correspondence(s, t, None, inlier=True) for s, t in zip(sources, targets) if t is not None]
    logger.info(f"Annotated {len(annotated)} correspondences between {src_image.image_id} and {tgt_image.image_id}")
    return annotated
