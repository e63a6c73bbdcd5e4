from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.evaluation.metrics import PairStatistics


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _non_negative(values: Dict[str, float]) -> Dict[str, float]:
    for key, value in values.items():
        if value is not None and value < 0:
            raise ValueError(f"{key}: metric values must be non-negative, got {value}")
    return values


class ConsistencyMetrics(_Model):
    per_pair: Dict[str, float] = Field(default_factory=dict)
    counts: Dict[str, int] = Field(default_factory=dict)
    overall: Optional[float] = Field(None, ge=0)
    ray_misses: int = Field(0, ge=0)

    @field_validator("per_pair")
    @classmethod
    def _non_negative_pairs(cls, value: Dict[str, float]) -> Dict[str, float]:
        return _non_negative(value)

    @classmethod
    def from_statistics(cls, stats: PairStatistics) -> "ConsistencyMetrics":
        return cls(per_pair=stats.per_pair, counts=stats.counts, overall=stats.overall, ray_misses=stats.skipped)


class TrajectoryMetrics(_Model):
    """Metrics of one trajectory: dead reckoning, SLAM, or SLAM on annotated correspondences."""

    label: str
    annotated_consistency: Optional[ConsistencyMetrics] = None
    detected_consistency: Optional[ConsistencyMetrics] = None
    ate: Optional[float] = Field(None, ge=0, description="horizontal RMSE against ground truth, m")
    ate_vs_annotated: Optional[float] = Field(None, ge=0, description="horizontal RMSE against annotated SLAM, m")


class EpeMetrics(_Model):
    per_pair: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    counts: Dict[str, int] = Field(default_factory=dict)
    overall: Optional[Tuple[float, float]] = None
    without_baseline: int = Field(0, ge=0)

    @field_validator("per_pair")
    @classmethod
    def _non_negative_pairs(cls, value):
        for key, (u, v) in value.items():
            if u < 0 or v < 0:
                raise ValueError(f"{key}: end-point errors must be non-negative")
        return value

    @classmethod
    def from_statistics(cls, stats: PairStatistics) -> "EpeMetrics":
        return cls(per_pair=stats.per_pair, counts=stats.counts, overall=stats.overall,
                   without_baseline=stats.skipped)


class DepthError(_Model):
    mean: Optional[float] = Field(None, ge=0)
    std: Optional[float] = Field(None, ge=0)
    landmarks: int = Field(0, ge=0)
    outside_map: int = Field(0, ge=0)


class MetricReport(_Model):
    """All evaluation metrics of one run; overall means are weighted by correspondence count."""

    trajectories: List[TrajectoryMetrics] = Field(default_factory=list)
    epe: Optional[EpeMetrics] = None
    depth_error: Dict[str, DepthError] = Field(default_factory=dict)  # with_prior / without_prior
    annotated_source: str = "none"  # file, mesh or none

    def trajectory(self, label: str) -> Optional[TrajectoryMetrics]:
        return next((t for t in self.trajectories if t.label == label), None)

    def rows(self) -> List[dict]:
        """Flat rows: one per pair and one ``overall`` row per metric, ready for plotting."""
        rows: List[dict] = []

        def add(section, trajectory, pair, metric, value, count=""):
            rows.append({"section": section, "trajectory": trajectory, "pair": pair, "metric": metric,
                         "value": value, "count": count})

        for t in self.trajectories:
            for name, consistency in (("annotated_consistency", t.annotated_consistency),
                                      ("detected_consistency", t.detected_consistency)):
                if consistency is None:
                    continue
                for pair, value in consistency.per_pair.items():
                    add(name, t.label, pair, "mean_error_m", value, consistency.counts[pair])
                add(name, t.label, "overall", "mean_error_m", consistency.overall, sum(consistency.counts.values()))
                add(name, t.label, "overall", "ray_misses", consistency.ray_misses)
            add("ate", t.label, "overall", "rmse_m", t.ate)
            if t.ate_vs_annotated is not None:
                add("ate", t.label, "overall", "rmse_vs_annotated_m", t.ate_vs_annotated)
        if self.epe is not None:
            for pair, (u, v) in self.epe.per_pair.items():
                add("epe", "slam", pair, "u_px", u, self.epe.counts[pair])
                add("epe", "slam", pair, "v_px", v, self.epe.counts[pair])
            if self.epe.overall is not None:
                add("epe", "slam", "overall", "u_px", self.epe.overall[0], sum(self.epe.counts.values()))
                add("epe", "slam", "overall", "v_px", self.epe.overall[1], sum(self.epe.counts.values()))
        for label, depth in self.depth_error.items():
            add("depth_error", label, "overall", "mean_m", depth.mean, depth.landmarks)
            add("depth_error", label, "overall", "std_m", depth.std, depth.landmarks)
        return rows
