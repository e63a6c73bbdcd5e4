from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import SonarConfig
from src.evaluation.projection import project_keypoints
from src.geometry.pose import Pose
from src.simulator.heightmap import Heightmap
from src.sonar.ping import Ping
from src.utils.errors import EvaluationError
from src.utils.logger import logger


def pair_key(corr: Correspondence) -> str:
    return f"{corr.source.image_id}|{corr.target.image_id}"


@dataclass
class PairStatistics:
    """Per image-pair means and counts plus the count-weighted overall mean."""

    per_pair: Dict[str, Any] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    overall: Any = None
    skipped: int = 0

    @classmethod
    def from_values(cls, keys: Sequence[str], values: Sequence[float], skipped: int = 0) -> "PairStatistics":
        grouped: Dict[str, List[float]] = defaultdict(list)
        for key, value in zip(keys, values):
            grouped[key].append(value)
        return cls(
            per_pair={k: float(np.mean(v)) for k, v in sorted(grouped.items())},
            counts={k: len(v) for k, v in sorted(grouped.items())},
            overall=float(np.mean(values)) if len(values) else None,
            skipped=skipped,
        )


def landmark_consistency(corrs: Sequence[Correspondence], poses: Dict[int, Pose], pings: Dict[int, Ping],
                         heightmap: Heightmap, sonar: SonarConfig) -> PairStatistics:
    """Distance between the seafloor intersections of the two rays of each correspondence."""
    corrs = list(corrs)
    src = project_keypoints([c.source for c in corrs], pings, poses, heightmap, sonar)
    tgt = project_keypoints([c.target for c in corrs], pings, poses, heightmap, sonar)
    hit = np.isfinite(src[:, 0]) & np.isfinite(tgt[:, 0]) if corrs else np.zeros(0, dtype=bool)
    errors = np.linalg.norm(src[hit] - tgt[hit], axis=1)
    keys = [pair_key(c) for c, ok in zip(corrs, hit) if ok]
    misses = int(np.count_nonzero(~hit))
    if misses:
        logger.warning(f"Landmark consistency: {misses} correspondences skipped after a ray miss")
    return PairStatistics.from_values(keys, errors.tolist(), misses)


def ate(estimate: Dict[int, Pose], reference: Dict[int, Pose]) -> float:
    """RMSE of horizontal position differences; no alignment, both share the global frame."""
    if set(estimate) != set(reference):
        missing = sorted(set(estimate) ^ set(reference))[:5]
        raise EvaluationError(f"Trajectories cover different pings (e.g. {missing})")
    if not estimate:
        raise EvaluationError("Cannot compute ATE of empty trajectories")
    ids = sorted(estimate)
    diff = np.array([estimate[k].position[:2] - reference[k].position[:2] for k in ids])
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))


def epe(detected: Sequence[Correspondence], baselines: Sequence[Optional[Keypoint]]) -> PairStatistics:
    """Mean |row| (u) and |column| (v) offsets of detected targets from their baselines.

    ``per_pair`` and ``overall`` hold (u, v) tuples; correspondences without
    a baseline are skipped and counted.
    """
    grouped: Dict[str, List[Tuple[int, int]]] = defaultdict(list)
    skipped = 0
    for corr, base in zip(detected, baselines):
        if base is None:
            skipped += 1
            continue
        grouped[pair_key(corr)].append((abs(corr.target.row - base.row), abs(corr.target.col - base.col)))
    all_offsets = [o for offsets in grouped.values() for o in offsets]
    return PairStatistics(
        per_pair={k: tuple(np.mean(v, axis=0).tolist()) for k, v in sorted(grouped.items())},
        counts={k: len(v) for k, v in sorted(grouped.items())},
        overall=tuple(np.mean(all_offsets, axis=0).tolist()) if all_offsets else None,
        skipped=skipped,
    )


def landmark_depth_error(landmarks: Sequence, heightmap: Heightmap) -> Tuple[Optional[float], Optional[float], int]:
    """Mean and std of |z - seafloor depth| over landmarks inside the map, plus the skipped count."""
    points = np.array([np.asarray(getattr(l, "position", l), dtype=float) for l in landmarks]).reshape(-1, 3)
    floor = heightmap.depth_at(points[:, 0], points[:, 1])
    inside = np.isfinite(floor)
    skipped = int(np.count_nonzero(~inside))
    if not np.any(inside):
        return None, None, skipped
    errors = np.abs(points[inside, 2] - floor[inside])
    return float(errors.mean()), float(errors.std()), skipped
