from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from src.config.pipeline_config import SonarConfig
from src.geometry.pose import Pose
from src.sonar.ping import Ping, index_pings, split_survey_lines
from src.utils.errors import SonarImageError
from src.utils.logger import logger

SIDES = ("port", "starboard")
INVALID = np.nan


@dataclass(frozen=True, eq=False)
class SonarImage:
    """Waterfall image of one side of one survey line.

    Before the canonical transform, column c is slant range (c + 0.5) * column_resolution;
    afterwards it is horizontal range. Invalid pixels hold NaN.
    """

    image_id: str
    side: str
    rows: List[int]
    pixels: np.ndarray
    column_resolution: float
    canonical: bool = False
    intensity_corrected: bool = False
    georef: Optional[np.ndarray] = None
    line: int = 0
    reversed: bool = False

    @property
    def shape(self):
        return self.pixels.shape

    def column_range(self, col) -> np.ndarray:
        return (np.asarray(col, dtype=float) + 0.5) * self.column_resolution

    def valid_mask(self) -> np.ndarray:
        return np.isfinite(self.pixels)

    def mean_heading(self, pings: Dict[int, Ping]) -> np.ndarray:
        h = np.sum([pings[pid].dr_pose.heading for pid in self.rows], axis=0)
        n = np.linalg.norm(h)
        return h / n if n > 0 else np.array([1.0, 0.0])


def _row_pings(image: SonarImage, pings) -> List[Ping]:
    index = pings if isinstance(pings, dict) else index_pings(pings)
    try:
        return [index[pid] for pid in image.rows]
    except KeyError as e:
        raise SonarImageError(f"Image {image.image_id}: no ping for row id {e}") from e


def build_images(pings: Sequence[Ping], cfg: SonarConfig) -> List[SonarImage]:
    """Stack pings into one port and one starboard image per survey line."""
    images: List[SonarImage] = []
    for k, line in enumerate(split_survey_lines(pings)):
        line_id = line[0].line if line[0].line is not None else k
        for side in SIDES:
            pixels = np.vstack([p.side(side) for p in line])
            if pixels.shape[1] != cfg.bins_per_side:
                raise SonarImageError(
                    f"Line {line_id}: pings have {pixels.shape[1]} bins, expected {cfg.bins_per_side}"
                )
            images.append(
                SonarImage(
                    image_id=f"line{line_id}_{side}",
                    side=side,
                    rows=[p.ping_id for p in line],
                    pixels=pixels,
                    column_resolution=cfg.slant_bin_width,
                    line=line_id,
                )
            )
    logger.info(f"Built {len(images)} sonar images from {len(pings)} pings")
    return images


def intensity_correction(image: SonarImage, pings) -> SonarImage:
    """Undo the Lambertian cos^2 fall-off under the flat-floor assumption and normalize to mean 1."""
    if image.canonical or image.intensity_corrected:
        raise SonarImageError(f"Image {image.image_id} is already intensity corrected")
    rows = _row_pings(image, pings)
    altitude = np.array([p.altitude for p in rows], dtype=float)
    if np.any(altitude <= 0):
        raise SonarImageError(f"Image {image.image_id}: zero or negative altitude")
    slant = image.column_range(np.arange(image.shape[1]))[None, :]
    alt = altitude[:, None]
    valid = slant >= alt
    cos_theta = np.where(valid, alt / np.where(valid, slant, 1.0), 1.0)
    corrected = np.where(valid, image.pixels / cos_theta**2, INVALID)
    mean = np.nanmean(corrected) if np.any(valid) else 1.0
    if mean > 0:
        corrected = corrected / mean
    return replace(image, pixels=corrected, intensity_corrected=True)


def slant_range_correction(image: SonarImage, pings, out_resolution: float) -> SonarImage:
    """Resample each row from slant range to horizontal range on a uniform grid."""
    if not image.intensity_corrected:
        raise SonarImageError(f"Image {image.image_id} needs intensity correction first")
    if image.canonical:
        return image
    rows = _row_pings(image, pings)
    slant = image.column_range(np.arange(image.shape[1]))
    n_out = int(np.floor(slant[-1] / out_resolution + 0.5))
    ground_out = (np.arange(n_out) + 0.5) * out_resolution
    out = np.full((image.shape[0], n_out), INVALID)
    for r, ping in enumerate(rows):
        values = image.pixels[r]
        valid = np.isfinite(values) & (slant >= ping.altitude)
        if np.count_nonzero(valid) < 2:
            continue
        ground = np.sqrt(slant[valid] ** 2 - ping.altitude**2)
        out[r] = np.interp(ground_out, ground, values[valid], left=INVALID, right=INVALID)
    return replace(image, pixels=out, column_resolution=out_resolution, canonical=True)


def canonicalize(image: SonarImage, pings, out_resolution: float) -> SonarImage:
    """Intensity plus slant-range correction; an already canonical image is returned unchanged."""
    if image.canonical:
        return image
    corrected = image if image.intensity_corrected else intensity_correction(image, pings)
    return slant_range_correction(corrected, pings, out_resolution)


def georeference(image: SonarImage, pings, sensor_offset: Optional[Pose] = None) -> SonarImage:
    """Attach the global 3D position of every pixel using the dead-reckoning poses."""
    if not image.canonical:
        raise SonarImageError(f"Image {image.image_id} must be canonical before geo-referencing")
    rows = _row_pings(image, pings)
    offset = sensor_offset or Pose.identity()
    sensors = [p.dr_pose * offset for p in rows]
    origin = np.array([s.position for s in sensors])
    heading = np.array([p.dr_pose.heading for p in rows])
    if image.side == "starboard":
        normal = np.stack([heading[:, 1], -heading[:, 0]], axis=1)
    else:
        normal = np.stack([-heading[:, 1], heading[:, 0]], axis=1)
    ground = image.column_range(np.arange(image.shape[1]))
    georef = np.empty(image.shape + (3,))
    georef[..., :2] = origin[:, None, :2] + ground[None, :, None] * normal[:, None, :]
    # seafloor under the vehicle: altitude is measured from the vehicle origin, not the sensor
    georef[..., 2] = np.array([p.dr_pose.position[2] + p.altitude for p in rows])[:, None]
    return replace(image, georef=georef)


@dataclass(frozen=True, eq=False)
class OverlapReport:
    overlaps: bool
    area: float
    polygon: np.ndarray  # (k, 2) vertices, counter-clockwise


def footprint(image: SonarImage) -> np.ndarray:
    """Convex hull of the valid geo-referenced pixels on the horizontal plane."""
    if image.georef is None:
        raise SonarImageError(f"Image {image.image_id} is not geo-referenced")
    valid = image.valid_mask()
    points = []
    for r in range(image.shape[0]):
        cols = np.flatnonzero(valid[r])
        if cols.size:
            points.append(image.georef[r, cols[0], :2])
            points.append(image.georef[r, cols[-1], :2])
    if len(points) < 3:
        return np.zeros((0, 2))
    points = np.asarray(points)
    try:
        hull = ConvexHull(points)
    except QhullError:
        return np.zeros((0, 2))
    return points[hull.vertices]


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman intersection of two counter-clockwise convex polygons."""
    output = [tuple(p) for p in subject]
    for k in range(len(clip)):
        if not output:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        edge = b - a

        def inside(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0

        def cross_point(p, q):
            p, q = np.asarray(p), np.asarray(q)
            d = q - p
            denom = edge[0] * d[1] - edge[1] * d[0]
            s = -(edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])) / denom
            return tuple(p + s * d)

        current, output = output, []
        for i, p in enumerate(current):
            q = current[(i + 1) % len(current)]
            if inside(q):
                if not inside(p):
                    output.append(cross_point(p, q))
                output.append(q)
            elif inside(p):
                output.append(cross_point(p, q))
    return np.asarray(output, dtype=float).reshape(-1, 2)


def overlap_check(a: SonarImage, b: SonarImage, min_overlap_area: float) -> OverlapReport:
    poly = clip_convex(footprint(a), footprint(b))
    area = polygon_area(poly)
    return OverlapReport(overlaps=bool(len(poly) >= 3 and area >= min_overlap_area), area=area, polygon=poly)
