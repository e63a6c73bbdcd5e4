from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.geometry.pose import Pose
from src.utils.errors import SonarImageError
from src.utils.logger import logger


@dataclass(frozen=True, eq=False)
class Ping:
    """One side-scan return line: slant-range indexed intensities on both sides."""

    ping_id: int
    time: float
    dr_pose: Pose
    altitude: float
    port: np.ndarray
    starboard: np.ndarray
    line: Optional[int] = None  # survey line index, -1 while turning

    def __post_init__(self):
        port = np.asarray(self.port, dtype=float)
        stbd = np.asarray(self.starboard, dtype=float)
        if not self.altitude > 0:
            raise SonarImageError(f"Ping {self.ping_id}: altitude must be positive, got {self.altitude}")
        if port.shape != stbd.shape or port.ndim != 1:
            raise SonarImageError(f"Ping {self.ping_id}: port/starboard arrays differ in shape")
        if not (np.all(np.isfinite(port)) and np.all(np.isfinite(stbd))):
            raise SonarImageError(f"Ping {self.ping_id}: non-finite intensities")
        if np.any(port < 0) or np.any(stbd < 0):
            raise SonarImageError(f"Ping {self.ping_id}: negative intensities")
        object.__setattr__(self, "port", port)
        object.__setattr__(self, "starboard", stbd)

    @property
    def bins(self) -> int:
        return self.port.shape[0]

    def side(self, side: str) -> np.ndarray:
        return self.port if side == "port" else self.starboard

    def with_pose(self, pose: Pose) -> "Ping":
        return Ping(self.ping_id, self.time, pose, self.altitude, self.port, self.starboard, self.line)


def downsample_ping(raw_intensities: Sequence[float], target_bins: int) -> np.ndarray:
    """Average raw bins into ``target_bins`` equal intervals (fractional overlaps weighted)."""
    raw = np.asarray(raw_intensities, dtype=float)
    n = raw.shape[0]
    if target_bins < 1:
        raise SonarImageError(f"target_bins must be positive, got {target_bins}")
    if n < target_bins:
        raise SonarImageError(f"Cannot downsample {n} raw bins to {target_bins}")
    if n == target_bins:
        return raw.copy()
    cumulative = np.concatenate([[0.0], np.cumsum(raw)])
    edges = np.linspace(0.0, n, target_bins + 1)
    at_edges = np.interp(edges, np.arange(n + 1), cumulative)
    return np.diff(at_edges) / (n / target_bins)


def index_pings(pings: Sequence[Ping]) -> Dict[int, Ping]:
    index: Dict[int, Ping] = {}
    for p in pings:
        if p.ping_id in index:
            raise SonarImageError(f"Duplicate ping_id {p.ping_id}")
        index[p.ping_id] = p
    return index


def split_survey_lines(pings: Sequence[Ping], heading_tolerance_deg: float = 20.0,
                       min_pings: int = 40) -> List[List[Ping]]:
    """Group time-ordered pings into straight survey lines.

    Uses the ``line`` tag when every ping carries one; otherwise a line runs
    while the heading stays within tolerance of the heading at its start.
    """
    if pings and all(p.line is not None for p in pings):
        lines: Dict[int, List[Ping]] = {}
        for p in pings:
            if p.line >= 0:
                lines.setdefault(p.line, []).append(p)
        return [lines[k] for k in sorted(lines)]

    tol = np.cos(np.deg2rad(heading_tolerance_deg))
    segments: List[List[Ping]] = []
    current: List[Ping] = []
    start_heading: Optional[np.ndarray] = None
    for p in pings:
        h = p.dr_pose.heading
        if start_heading is not None and float(h @ start_heading) < tol:
            segments.append(current)
            current, start_heading = [], None
        if start_heading is None:
            start_heading = h
        current.append(p)
    if current:
        segments.append(current)
    kept = [s for s in segments if len(s) >= min_pings]
    logger.info(f"Split {len(pings)} pings into {len(kept)} survey lines by heading")
    return kept
