"""Synthetic bathymetry on a regular grid with a bilinear surface."""

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from src.config.pipeline_config import BathymetryConfig, SurveyConfig
from src.utils.errors import SimulationError
from src.utils.logger import logger

Extent = Tuple[float, float, float, float]  # xmin, xmax, ymin, ymax


@dataclass(frozen=True, eq=False)
class Heightmap:
    """Depth (positive down) and reflectivity sampled at grid nodes.

    Node (row, col) sits at (x0 + col * cell_size, y0 + row * cell_size); rows
    run north, columns east.
    """

    origin: np.ndarray
    cell_size: float
    depth: np.ndarray
    reflectivity: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        reflectivity = np.asarray(self.reflectivity, dtype=float)
        if not self.cell_size > 0:
            raise SimulationError(f"Cell size must be positive, got {self.cell_size}")
        if depth.ndim != 2 or min(depth.shape) < 2:
            raise SimulationError(f"Heightmap needs at least 2x2 nodes, got {depth.shape}")
        if reflectivity.shape != depth.shape:
            raise SimulationError("Reflectivity and depth grids differ in shape")
        if not np.all(np.isfinite(depth)):
            raise SimulationError("Heightmap depths must be finite")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(2))
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "reflectivity", reflectivity)

    @property
    def nrows(self) -> int:
        return self.depth.shape[0]

    @property
    def ncols(self) -> int:
        return self.depth.shape[1]

    @property
    def extent(self) -> Extent:
        x0, y0 = self.origin
        return x0, x0 + (self.ncols - 1) * self.cell_size, y0, y0 + (self.nrows - 1) * self.cell_size

    @cached_property
    def depth_range(self) -> Tuple[float, float]:
        return float(self.depth.min()), float(self.depth.max())

    @cached_property
    def _slopes(self) -> Tuple[np.ndarray, np.ndarray]:
        dz_drow, dz_dcol = np.gradient(self.depth, self.cell_size)
        return dz_dcol, dz_drow

    def contains(self, x, y) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.extent
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)

    def _sample(self, grid: np.ndarray, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        coords = np.stack([np.ravel((y - self.origin[1]) / self.cell_size),
                           np.ravel((x - self.origin[0]) / self.cell_size)])
        values = ndimage.map_coordinates(grid, coords, order=1, mode="nearest").reshape(np.shape(x))
        return np.where(self.contains(x, y), values, np.nan)

    def depth_at(self, x, y) -> np.ndarray:
        """Bilinear depth; NaN outside the grid."""
        return self._sample(self.depth, x, y)

    def reflectivity_at(self, x, y) -> np.ndarray:
        return self._sample(self.reflectivity, x, y)

    def normal_at(self, x, y) -> np.ndarray:
        """Unit surface normal pointing up (negative z)."""
        dzdx, dzdy = (self._sample(g, x, y) for g in self._slopes)
        n = np.stack([dzdx, dzdy, -np.ones_like(dzdx)], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        cols = self.origin[0] + np.arange(self.ncols) * self.cell_size
        rows = self.origin[1] + np.arange(self.nrows) * self.cell_size
        return np.meshgrid(cols, rows)


@dataclass(frozen=True)
class Groove:
    """A straight trawl mark: cosine cross-section, ``depth`` meters deep at its centerline."""

    start: Tuple[float, float]
    end: Tuple[float, float]
    depth: float
    width: float


def flat_heightmap(extent: Extent, depth: float, cell_size: float = 0.5, reflectivity: float = 0.5) -> Heightmap:
    xmin, xmax, ymin, ymax = extent
    ncols = int(np.ceil((xmax - xmin) / cell_size)) + 1
    nrows = int(np.ceil((ymax - ymin) / cell_size)) + 1
    return Heightmap(np.array([xmin, ymin]), cell_size, np.full((nrows, ncols), float(depth)),
                     np.full((nrows, ncols), float(reflectivity)))


def carve_grooves(heightmap: Heightmap, grooves: Iterable[Groove]) -> Heightmap:
    """Deepen the map along each groove; overlapping grooves keep the deeper profile."""
    extra = np.zeros_like(heightmap.depth)
    cell = heightmap.cell_size
    x0, y0 = heightmap.origin
    for g in grooves:
        a, b = np.asarray(g.start, dtype=float), np.asarray(g.end, dtype=float)
        half = 0.5 * g.width
        lo = np.minimum(a, b) - half
        hi = np.maximum(a, b) + half
        c0, c1 = max(int(np.floor((lo[0] - x0) / cell)), 0), min(int(np.ceil((hi[0] - x0) / cell)) + 1, heightmap.ncols)
        r0, r1 = max(int(np.floor((lo[1] - y0) / cell)), 0), min(int(np.ceil((hi[1] - y0) / cell)) + 1, heightmap.nrows)
        if c0 >= c1 or r0 >= r1:
            continue
        xs, ys = np.meshgrid(x0 + np.arange(c0, c1) * cell, y0 + np.arange(r0, r1) * cell)
        ab = b - a
        length2 = float(ab @ ab)
        s = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / length2, 0.0, 1.0) if length2 > 0 else 0.0
        dist = np.hypot(xs - (a[0] + s * ab[0]), ys - (a[1] + s * ab[1]))
        profile = np.where(dist < half, 0.5 * g.depth * (1.0 + np.cos(np.pi * dist / half)), 0.0)
        extra[r0:r1, c0:c1] = np.maximum(extra[r0:r1, c0:c1], profile)
    return replace(heightmap, depth=heightmap.depth + extra)


def survey_extent(plan: SurveyConfig, margin: float) -> Extent:
    """Horizontal bounds of a lawnmower plan (lines along y, turns included) plus ``margin``."""
    turn_radius = 0.5 * plan.line_spacing
    return (
        -margin,
        (plan.line_count - 1) * plan.line_spacing + margin,
        -turn_radius - margin,
        plan.line_length + turn_radius + margin,
    )


def _smooth_noise(rng: np.random.Generator, shape, sigma_cells: float) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma_cells, mode="reflect")
    std = field.std()
    return field / std if std > 0 else field


def _random_grooves(rng: np.random.Generator, extent: Extent, params: BathymetryConfig) -> List[Groove]:
    xmin, xmax, ymin, ymax = extent
    grooves = []
    for _ in range(params.mark_count):
        center = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        angle = rng.uniform(0.0, np.pi)
        half_length = 0.5 * rng.uniform(*params.mark_length)
        direction = np.array([np.cos(angle), np.sin(angle)])
        grooves.append(Groove(
            start=tuple(center - half_length * direction),
            end=tuple(center + half_length * direction),
            depth=float(rng.uniform(*params.mark_depth)),
            width=float(rng.uniform(*params.mark_width)),
        ))
    return grooves


def generate_bathymetry(seed: int, params: Optional[BathymetryConfig] = None,
                        extent: Optional[Extent] = None, plan: Optional[SurveyConfig] = None) -> Heightmap:
    """Flat base plane with smooth relief, straight trawl marks and textured reflectivity.

    The extent defaults to the survey footprint of ``plan`` plus the configured margin.
    """
    params = params or BathymetryConfig()
    extent = extent or survey_extent(plan or SurveyConfig(), params.margin)
    rng = np.random.default_rng(seed)
    base = flat_heightmap(extent, params.base_depth, params.cell_size, params.reflectivity_mean)
    shape = base.depth.shape

    depth = base.depth.copy()
    if params.noise_amplitude > 0:
        relief = _smooth_noise(rng, shape, params.noise_scale / params.cell_size)
        peak = np.abs(relief).max()
        depth += params.noise_amplitude * relief / (peak if peak > 0 else 1.0)

    reflectivity = base.reflectivity.copy()
    if params.reflectivity_texture > 0:
        texture = _smooth_noise(rng, shape, params.texture_scale / params.cell_size)
        reflectivity = np.clip(params.reflectivity_mean + params.reflectivity_texture * texture * 0.5, 0.05, 1.0)

    grooves = _random_grooves(rng, extent, params)
    heightmap = carve_grooves(replace(base, depth=depth, reflectivity=reflectivity), grooves)
    low, high = heightmap.depth_range
    logger.info(
        f"Generated {heightmap.nrows}x{heightmap.ncols} bathymetry (cell {params.cell_size} m) "
        f"with {len(grooves)} trawl marks, depth {low:.2f}..{high:.2f} m"
    )
    return heightmap
