from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class Keypoint:
    """A salient pixel of a canonical image, geo-referenced through dead reckoning."""

    image_id: str
    row: int
    col: int
    side: str
    geo: np.ndarray
    descriptor: Optional[np.ndarray] = None
    score: float = 0.0
    ping_id: int = -1  # ping of the image row

    def with_descriptor(self, descriptor: np.ndarray) -> "Keypoint":
        return replace(self, descriptor=descriptor)


@dataclass(frozen=True, eq=False)
class Correspondence:
    source: Keypoint
    target: Keypoint
    descriptor_distance: Optional[float] = None  # None for annotated pairs
    inlier: bool = False

    def __post_init__(self):
        if self.source.image_id == self.target.image_id:
            raise ValueError("A correspondence must relate two different images")
        if self.descriptor_distance is not None and self.descriptor_distance < 0:
            raise ValueError("descriptor_distance must be non-negative")

    @property
    def key(self):
        return (self.source.image_id, self.source.row, self.source.col,
                self.target.image_id, self.target.row, self.target.col)
