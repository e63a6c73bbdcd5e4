from typing import Optional

import numpy as np

from src.simulator.heightmap import Heightmap

HIT_TOLERANCE = 0.01  # meters along the ray


def raycast_batch(origins: np.ndarray, directions: np.ndarray, heightmap: Heightmap,
                  step: Optional[float] = None) -> np.ndarray:
    """First intersection of each ray with the bilinear seafloor; NaN rows for misses.

    Rays are marched in ``step`` increments (default: the cell size) through
    the depth band of the map, then the crossing is refined by bisection to
    within ``HIT_TOLERANCE``. A ray that leaves the grid, or never descends
    to the seafloor, misses.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    step = step or heightmap.cell_size
    n = len(origins)
    hits = np.full((n, 3), np.nan)
    if n == 0:
        return hits

    shallowest, deepest = heightmap.depth_range
    dz = directions[:, 2]
    z0 = origins[:, 2]

    def below_floor(t: np.ndarray, idx: np.ndarray) -> np.ndarray:
        p = origins[idx] + t[:, None] * directions[idx]
        return p[:, 2] - heightmap.depth_at(p[:, 0], p[:, 1])

    # no intersection is possible above the shallowest node or below the deepest one
    descending = dz > 1e-12
    t_start = np.where(descending, np.maximum((shallowest - z0) / np.where(descending, dz, 1.0), 0.0), 0.0)
    t_end = np.where(descending, (deepest - z0) / np.where(descending, dz, 1.0) + step, 0.0)
    active = np.flatnonzero(descending & (t_end >= t_start))
    lo = t_start.copy()
    hi = np.full(n, np.nan)

    t = t_start.copy()
    while active.size:
        f = below_floor(t[active], active)
        outside = np.isnan(f)
        crossed = ~outside & (f >= 0)
        hi[active[crossed]] = t[active[crossed]]
        lo[active[crossed]] = np.maximum(t[active[crossed]] - step, t_start[active[crossed]])
        keep = ~outside & ~crossed
        active = active[keep]
        t[active] += step
        active = active[t[active] <= t_end[active]]

    found = np.flatnonzero(np.isfinite(hi))
    if found.size:
        a, b = lo[found], hi[found]
        iterations = int(np.ceil(np.log2(max(step, HIT_TOLERANCE) / HIT_TOLERANCE))) + 2
        for _ in range(iterations):
            mid = 0.5 * (a + b)
            f = below_floor(mid, found)
            inside = f >= 0
            b = np.where(inside, mid, b)
            a = np.where(inside, a, mid)
        t_hit = 0.5 * (a + b)
        hits[found] = origins[found] + t_hit[:, None] * directions[found]
    return hits


def raycast(origin, direction, heightmap: Heightmap, step: Optional[float] = None) -> Optional[np.ndarray]:
    """Single-ray form of ``raycast_batch``; ``None`` on a miss."""
    hit = raycast_batch(np.asarray(origin, dtype=float)[None], np.asarray(direction, dtype=float)[None],
                        heightmap, step)[0]
    return None if np.isnan(hit[0]) else hit
