from dataclasses import dataclass, field
from typing import Dict, List, Optional

from src.association.keypoint import Correspondence
from src.estimation.relative_pose import LoopClosureConstraint
from src.sonar.sonar_image import SonarImage


@dataclass
class PipelineState:
    """
    State for the per-image LangGraph workflow.
    One state object follows a single survey-line image through the stages.
    """
    image: SonarImage
    overlaps: List[str] = field(default_factory=list)
    correspondences: List[Correspondence] = field(default_factory=list)
    constraints: List[LoopClosureConstraint] = field(default_factory=list)
    factor_ids: List[int] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None
    failed_stage: Optional[str] = None

    @property
    def image_id(self) -> str:
        return self.image.image_id

    def update_image(self, image: SonarImage):
        """Replace the image with its processed version"""
        self.image = image

    def update_overlaps(self, overlaps: List[str]):
        self.overlaps = overlaps
        from src.utils.logger import logger
        logger.info(f"Image {self.image_id} overlaps {len(overlaps)} processed images: {overlaps}")

    def update_correspondences(self, correspondences: List[Correspondence]):
        self.correspondences = correspondences

    def update_constraints(self, constraints: List[LoopClosureConstraint]):
        self.constraints = constraints

    def add_timing(self, stage: str, seconds: float):
        """Accumulate wall time spent in a stage"""
        self.timings[stage] = self.timings.get(stage, 0.0) + seconds

    def set_error(self, stage: str, error: str):
        """Set error state"""
        self.error = error
        self.failed_stage = stage
        from src.utils.logger import logger
        logger.error(f"Stage {stage} failed for image {self.image_id}: {error}")

    def is_complete(self) -> bool:
        return self.error is not None or "update_graph" in self.timings

    def to_dict(self) -> Dict:
        """Convert state to dictionary for logging"""
        return {
            'image_id': self.image_id,
            'overlaps': self.overlaps,
            'correspondences': len(self.correspondences),
            'constraints': len(self.constraints),
            'factors': len(self.factor_ids),
            'timings': self.timings,
            'error': self.error,
        }
