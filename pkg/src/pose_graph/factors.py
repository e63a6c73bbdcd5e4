from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.geometry.pose import Pose
from src.utils.errors import PoseGraphError


class FactorKind(str, Enum):
    ODOMETRY = "odometry"
    LOOP_CLOSURE = "loop_closure"
    PRIOR = "prior"


@dataclass
class PoseNode:
    node_id: int
    estimate: Pose
    fixed: bool = False


@dataclass(frozen=True, eq=False)
class Factor:
    """Relative-pose measurement ``measured = T_i^-1 T_j``; a prior has no ``i``."""

    kind: FactorKind
    endpoints: Tuple[int, ...]
    measured: Pose
    covariance: np.ndarray  # 6x6, twist order (rotation, translation)
    sqrt_information: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        expected = 1 if self.kind == FactorKind.PRIOR else 2
        if len(self.endpoints) != expected:
            raise PoseGraphError(f"A {self.kind.value} factor needs {expected} endpoint(s), got {self.endpoints}")
        cov = np.asarray(self.covariance, dtype=float).reshape(6, 6)
        if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise PoseGraphError(f"Factor {self.endpoints}: covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            # information = L L^T, whitened residual = L^T e
            L = np.linalg.cholesky(np.linalg.inv(cov))
        except np.linalg.LinAlgError as e:
            raise PoseGraphError(f"Factor {self.endpoints}: covariance is not positive definite") from e
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "sqrt_information", L.T)

    @property
    def information(self) -> np.ndarray:
        return self.sqrt_information.T @ self.sqrt_information

    @property
    def source(self) -> Optional[int]:
        return None if self.kind == FactorKind.PRIOR else self.endpoints[0]

    @property
    def target(self) -> int:
        return self.endpoints[-1]


@dataclass
class GraphSolution:
    poses: Dict[int, Pose]
    cost_before: float  # half the minimized objective, Huber-weighted when enabled
    cost_after: float
    iterations: int
    converged: bool
    chi2: List[float]  # per factor, aligned with factor ids
    reason: str = ""
    variables: int = 0
