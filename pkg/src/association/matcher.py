from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import AssociationConfig
from src.utils.logger import logger


def match_near_neighbor(src: Sequence[Keypoint], tgt: Sequence[Keypoint], cfg: AssociationConfig,
                        radius: Optional[float] = None) -> List[Correspondence]:
    """Geo-referenced radius search, then minimum descriptor distance; one-to-one on targets."""
    r = cfg.radius if radius is None else radius
    if r <= 0 or not src or not tgt:
        return []
    tree = cKDTree(np.array([k.geo[:2] for k in tgt]))
    tgt_desc = np.array([k.descriptor for k in tgt])

    # best claimant per target index: (distance, source index)
    claims: Dict[int, tuple] = {}
    for i, kp in enumerate(src):
        candidates = sorted(tree.query_ball_point(kp.geo[:2], r))
        if not candidates:
            continue
        dists = np.linalg.norm(tgt_desc[candidates] - kp.descriptor, axis=1)
        best = int(np.argmin(dists))
        j, d = candidates[best], float(dists[best])
        if j not in claims or (d, i) < claims[j]:
            claims[j] = (d, i)

    matches = [
        Correspondence(source=src[i], target=tgt[j], descriptor_distance=d)
        for j, (d, i) in sorted(claims.items(), key=lambda item: item[1][1])
    ]
    logger.info(f"Near-neighbor search (r={r:.1f} m) produced {len(matches)} candidates")
    return matches


def _row_deltas(cands: Sequence[Correspondence], mirror_target_rows: Optional[int]) -> np.ndarray:
    tgt_rows = np.array([c.target.row for c in cands], dtype=float)
    if mirror_target_rows is not None:
        tgt_rows = (mirror_target_rows - 1) - tgt_rows
    return tgt_rows - np.array([c.source.row for c in cands], dtype=float)


def _consensus_key(deltas: np.ndarray, hypothesis: float, tolerance: float):
    deviation = np.abs(deltas - hypothesis)
    members = deviation <= tolerance
    count = int(members.sum())
    return (-count, float(deviation[members].mean()) if count else np.inf, hypothesis), members


def sliding_compatibility_ransac(cands: Sequence[Correspondence], cfg: AssociationConfig,
                                 mirror_target_rows: Optional[int] = None) -> List[Correspondence]:
    """Keep the largest set of pairs sharing one row offset between the two images.

    A hypothesis is the row difference of one sampled pair. Distinct hypotheses
    are sampled without replacement from their sorted set, so the outcome does
    not depend on input order; when there are no more of them than iterations,
    all are scored. Ties go to the smaller mean deviation, then the smaller
    offset. ``mirror_target_rows`` reverses target row indices for
    anti-parallel lines.
    """
    if not cands:
        return []
    deltas = _row_deltas(cands, mirror_target_rows)
    hypotheses = np.unique(deltas)
    if hypotheses.size > cfg.ransac_iterations:
        rng = np.random.default_rng(cfg.rng_seed)
        hypotheses = rng.choice(hypotheses, size=cfg.ransac_iterations, replace=False)

    best_key, best_members = None, None
    for h in hypotheses:
        key, members = _consensus_key(deltas, float(h), cfg.ransac_row_tolerance)
        if best_key is None or key < best_key:
            best_key, best_members = key, members

    inliers = [replace(c, inlier=True) for c, keep in zip(cands, best_members) if keep]
    logger.info(
        f"Sliding compatibility check kept {len(inliers)}/{len(cands)} pairs (row offset {best_key[2]:+.0f})"
    )
    return inliers
