from typing import List

import numpy as np

from src.association.keypoint import Keypoint
from src.sonar.sonar_image import SonarImage
from src.utils.errors import DescriptorUnavailable
from src.utils.logger import logger

PATCH = 16
SPATIAL_BINS = 4
ORIENTATION_BINS = 8
CLAMP = 0.2
PATCH_RADIUS = PATCH // 2 + 1  # one extra pixel for central differences

# gradients are sampled on a 17x17 grid of integer offsets (-8 .. 8) centred on the keypoint;
# the outermost ring only feeds the outer cells through interpolation
_OFFSETS = np.arange(-(PATCH // 2), PATCH // 2 + 1, dtype=float)
_Y, _X = np.meshgrid(_OFFSETS, _OFFSETS, indexing="ij")
_WEIGHT = np.exp(-(_X**2 + _Y**2) / (2.0 * (0.5 * PATCH) ** 2))
_BIN_X = _X / (PATCH / SPATIAL_BINS) + SPATIAL_BINS / 2 - 0.5
_BIN_Y = _Y / (PATCH / SPATIAL_BINS) + SPATIAL_BINS / 2 - 0.5


def _window(image: SonarImage, kp: Keypoint) -> np.ndarray:
    r, c = kp.row, kp.col
    r0, r1 = r - PATCH_RADIUS, r + PATCH_RADIUS + 1
    c0, c1 = c - PATCH_RADIUS, c + PATCH_RADIUS + 1
    height, width = image.shape
    if r0 < 0 or c0 < 0 or r1 > height or c1 > width:
        raise DescriptorUnavailable(f"Keypoint ({r}, {c}) too close to the border of {image.image_id}")
    window = image.pixels[r0:r1, c0:c1]
    if not np.all(np.isfinite(window)):
        raise DescriptorUnavailable(f"Keypoint ({r}, {c}) patch touches invalid pixels in {image.image_id}")
    # reversed traversal: describe the patch rotated by 180 degrees
    return window[::-1, ::-1] if image.reversed else window


def descriptor_from_window(window: np.ndarray) -> np.ndarray:
    """Gradient-orientation histogram (4x4 cells x 8 bins) at fixed scale and orientation."""
    gx = 0.5 * (window[1:-1, 2:] - window[1:-1, :-2])
    gy = 0.5 * (window[2:, 1:-1] - window[:-2, 1:-1])
    magnitude = np.hypot(gx, gy) * _WEIGHT
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bin_o = theta * ORIENTATION_BINS / (2.0 * np.pi)

    x0, y0, o0 = np.floor(_BIN_X), np.floor(_BIN_Y), np.floor(bin_o)
    dx, dy, do = _BIN_X - x0, _BIN_Y - y0, bin_o - o0
    x0, y0, o0 = x0.astype(int), y0.astype(int), o0.astype(int)

    hist = np.zeros((SPATIAL_BINS, SPATIAL_BINS, ORIENTATION_BINS))
    for iy, wy in ((0, 1.0 - dy), (1, dy)):
        for ix, wx in ((0, 1.0 - dx), (1, dx)):
            yb, xb = y0 + iy, x0 + ix
            inside = (yb >= 0) & (yb < SPATIAL_BINS) & (xb >= 0) & (xb < SPATIAL_BINS)
            for io, wo in ((0, 1.0 - do), (1, do)):
                ob = (o0 + io) % ORIENTATION_BINS
                w = (magnitude * wy * wx * wo)[inside]
                np.add.at(hist, (yb[inside], xb[inside], ob[inside]), w)

    desc = hist.ravel()
    norm = np.linalg.norm(desc)
    if norm <= 1e-12:
        raise DescriptorUnavailable("Patch without gradient")
    desc = np.minimum(desc / norm, CLAMP)
    return desc / np.linalg.norm(desc)


def compute_descriptor(image: SonarImage, kp: Keypoint) -> np.ndarray:
    return descriptor_from_window(_window(image, kp))


def describe_keypoints(image: SonarImage, keypoints: List[Keypoint]) -> List[Keypoint]:
    """Attach descriptors; keypoints without a valid patch are dropped."""
    described = []
    for kp in keypoints:
        try:
            described.append(kp.with_descriptor(compute_descriptor(image, kp)))
        except DescriptorUnavailable:
            continue
    dropped = len(keypoints) - len(described)
    if dropped:
        logger.info(f"Dropped {dropped} keypoints without descriptor in {image.image_id}")
    return described


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b))
