from typing import Dict, List, Optional


class SonarSlamError(Exception):
    """Base class for every failure raised by the pipeline."""


class ConfigError(SonarSlamError):
    """Invalid or unparseable configuration."""


class DatasetError(SonarSlamError):
    """Missing, unreadable or inconsistent dataset/result files."""


class SonarImageError(SonarSlamError):
    """Invalid ping data or an image operation applied out of order."""


class DescriptorUnavailable(SonarSlamError):
    """The descriptor patch leaves the image or touches invalid pixels."""


class EstimationError(SonarSlamError):
    """Degenerate measurement geometry in the two-ping problem."""


class PoseGraphError(SonarSlamError):
    """Structural or numerical failure of the global pose graph."""

    def __init__(self, message: str, diagnostics: Optional[List[Dict]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class PipelineStageError(SonarSlamError):
    """A pipeline stage failed; `stage` names it for the diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class SimulationError(SonarSlamError):
    """The requested survey does not fit the generated seafloor."""


class EvaluationError(SonarSlamError):
    """Inputs to a metric do not line up (e.g. trajectories over different pings)."""
