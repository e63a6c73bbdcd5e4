from typing import List

import numpy as np
from scipy import ndimage
from skimage.feature import corner_fast

from src.association.keypoint import Keypoint
from src.config.pipeline_config import AssociationConfig
from src.sonar.sonar_image import SonarImage
from src.utils.errors import SonarImageError
from src.utils.logger import logger

FAST_ARC = 9  # contiguous pixels of the 16-pixel Bresenham circle
FAST_RADIUS = 3


def fast_response(pixels: np.ndarray, threshold: float, smoothing_sigma: float = 0.0) -> np.ndarray:
    """Segment-test corner score; zero wherever the test fails or touches invalid pixels."""
    valid = np.isfinite(pixels)
    filled = np.where(valid, pixels, 0.0)
    if smoothing_sigma > 0:
        filled = ndimage.gaussian_filter(filled, smoothing_sigma)
    response = corner_fast(filled, n=FAST_ARC, threshold=threshold)
    margin = FAST_RADIUS + (int(np.ceil(3 * smoothing_sigma)) if smoothing_sigma > 0 else 0)
    near_invalid = ndimage.binary_dilation(~valid, structure=np.ones((2 * margin + 1, 2 * margin + 1)))
    response[near_invalid] = 0.0
    return response


def detect_corners_grid(image: SonarImage, cfg: AssociationConfig) -> List[Keypoint]:
    """Evenly distributed FAST corners: up to ``max_per_cell`` strongest per grid cell."""
    if not image.canonical or image.georef is None:
        raise SonarImageError(f"Image {image.image_id} must be canonical and geo-referenced for detection")
    height, width = image.shape
    cell = cfg.cell_size
    if height < cell or width < cell:
        return []

    response = fast_response(image.pixels, cfg.corner_threshold, cfg.smoothing_sigma)
    size = 2 * cfg.min_distance + 1
    peaks = (response > 0) & (response == ndimage.maximum_filter(response, size=size, mode="constant"))
    invalid = ~image.valid_mask()

    keypoints: List[Keypoint] = []
    skipped = 0
    for r0 in range(0, height, cell):
        for c0 in range(0, width, cell):
            block = (slice(r0, min(r0 + cell, height)), slice(c0, min(c0 + cell, width)))
            if invalid[block].mean() > cfg.max_invalid_fraction:
                skipped += 1
                continue
            rows, cols = np.nonzero(peaks[block])
            if rows.size == 0:
                continue
            rows, cols = rows + r0, cols + c0
            scores = response[rows, cols]
            order = np.lexsort((cols, rows, -scores))
            accepted = []
            for k in order:
                r, c = int(rows[k]), int(cols[k])
                if any(max(abs(r - ar), abs(c - ac)) <= cfg.min_distance for ar, ac in accepted):
                    continue
                accepted.append((r, c))
                keypoints.append(
                    Keypoint(image.image_id, r, c, image.side, image.georef[r, c].copy(),
                             score=float(scores[k]), ping_id=image.rows[r])
                )
                if len(accepted) >= cfg.max_per_cell:
                    break
    logger.info(f"Detected {len(keypoints)} corners in {image.image_id} ({skipped} cells skipped as invalid)")
    return keypoints
