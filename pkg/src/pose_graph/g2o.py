"""g2o-style plain-text snapshot of a pose graph.

Quaternions are written x y z w and information matrices translation-first,
as g2o expects; internally twists are rotation-first.
"""

from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from src.config.pipeline_config import GraphConfig
from src.geometry.pose import Pose
from src.pose_graph.factors import Factor, FactorKind, PoseNode
from src.pose_graph.pose_graph import PoseGraph
from src.utils.errors import DatasetError
from src.utils.logger import logger

# rotation-first <-> translation-first
_PERMUTATION = np.array([3, 4, 5, 0, 1, 2])
_UPPER = np.triu_indices(6)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _pose_fields(pose: Pose) -> List[float]:
    w, x, y, z = pose.orientation
    return [*pose.position, x, y, z, w]


def _pose_from_fields(fields: List[str]) -> Pose:
    x, y, z, qx, qy, qz, qw = map(float, fields[:7])
    return Pose(np.array([x, y, z]), np.array([qw, qx, qy, qz]))


def _information_fields(factor: Factor) -> List[float]:
    info = factor.information[np.ix_(_PERMUTATION, _PERMUTATION)]
    return info[_UPPER].tolist()


def _covariance_from_fields(fields: List[str]) -> np.ndarray:
    info = np.zeros((6, 6))
    info[_UPPER] = np.array(fields[:21], dtype=float)
    info = info + info.T - np.diag(info.diagonal())
    inverse = np.argsort(_PERMUTATION)
    return np.linalg.inv(info[np.ix_(inverse, inverse)])


def write_g2o(graph: PoseGraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = [f"VERTEX_SE3 {nid} {_fmt(_pose_fields(n.estimate))}" for nid, n in graph.nodes.items()]
    for f in graph.factors:
        if f.kind == FactorKind.PRIOR:
            lines.append(f"EDGE_SE3_PRIOR {f.target} {_fmt(_pose_fields(f.measured))} {_fmt(_information_fields(f))}")
        else:
            i, j = f.endpoints
            lines.append(f"EDGE_SE3 {i} {j} {_fmt(_pose_fields(f.measured))} {_fmt(_information_fields(f))}")
    if graph.fixed_node is not None:
        lines.append(f"FIX {graph.fixed_node}")
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote g2o snapshot with {len(graph.nodes)} vertices and {len(graph.factors)} edges to {path}")
    return path


def read_g2o(path: Union[str, Path], cfg: Optional[GraphConfig] = None) -> PoseGraph:
    """Read a snapshot; an edge between consecutive vertex ids is taken as odometry."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"g2o file not found: {path}")
    nodes: dict = {}
    factors: List[Factor] = []
    fixed = None
    edges = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        tag = fields[0]
        try:
            if tag in ("VERTEX_SE3", "VERTEX_SE3:QUAT"):
                nodes[int(fields[1])] = _pose_from_fields(fields[2:])
            elif tag in ("EDGE_SE3", "EDGE_SE3:QUAT"):
                edges.append((int(fields[1]), int(fields[2]), fields[3:]))
            elif tag == "EDGE_SE3_PRIOR":
                factors.append(Factor(FactorKind.PRIOR, (int(fields[1]),), _pose_from_fields(fields[2:]),
                                      _covariance_from_fields(fields[9:])))
            elif tag == "FIX":
                fixed = int(fields[1])
            else:
                logger.warning(f"{path}:{number}: unsupported tag {tag} ignored")
        except (ValueError, IndexError, np.linalg.LinAlgError) as e:
            raise DatasetError(f"{path}:{number}: malformed {tag} line") from e

    order = sorted(nodes)
    position = {nid: k for k, nid in enumerate(order)}
    for i, j, fields in edges:
        if i not in position or j not in position:
            raise DatasetError(f"{path}: edge {i}-{j} refers to a missing vertex")
        kind = FactorKind.ODOMETRY if position[j] - position[i] == 1 else FactorKind.LOOP_CLOSURE
        factors.append(Factor(kind, (i, j), _pose_from_fields(fields), _covariance_from_fields(fields[7:])))

    fixed = fixed if fixed is not None else (order[0] if order else None)
    graph_nodes = [PoseNode(nid, nodes[nid], nid == fixed) for nid in order]
    logger.info(f"Read g2o snapshot with {len(graph_nodes)} vertices and {len(factors)} edges from {path}")
    return PoseGraph.from_factors(graph_nodes, factors, cfg)
