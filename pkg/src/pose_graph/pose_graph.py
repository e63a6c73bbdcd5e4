"""Global pose graph: one node per retained ping, odometry chain plus loop closures."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from src.config.pipeline_config import EstimationConfig, GraphConfig
from src.estimation.measurement import odometry_covariance
from src.estimation.relative_pose import LoopClosureConstraint
from src.geometry.pose import (
    Pose,
    relative,
    se3_adjoint,
    se3_compose,
    se3_exp,
    se3_inverse,
    se3_log,
    se3_right_jacobian_inverse,
    stack_poses,
    unstack_poses,
)
from src.optim import LMSettings, levenberg_marquardt
from src.pose_graph.factors import Factor, FactorKind, GraphSolution, PoseNode
from src.sonar.ping import Ping
from src.utils.errors import PoseGraphError
from src.utils.logger import logger

_BLOCK = np.arange(6)


@dataclass
class _FactorBatch:
    ids: np.ndarray
    ii: np.ndarray  # source node index; the virtual identity node for priors
    jj: np.ndarray
    Zinv_R: np.ndarray
    Zinv_t: np.ndarray
    W: np.ndarray  # (F, 6, 6) square-root information
    loop: np.ndarray


def _huber_scale(sq_norm: np.ndarray, threshold: float) -> np.ndarray:
    """sqrt(rho(s) / s) so that the scaled residual carries the Huber cost."""
    k2 = threshold**2
    safe = np.where(sq_norm > 0, sq_norm, 1.0)
    rho = np.where(sq_norm <= k2, sq_norm, 2.0 * threshold * np.sqrt(safe) - k2)
    return np.where(sq_norm > 0, np.sqrt(rho / safe), 1.0)


class _GraphProblem:
    """Whitened tangent-space residuals over the variable nodes; state is (R, t) for all nodes."""

    def __init__(self, batch: _FactorBatch, columns: np.ndarray, huber_threshold: Optional[float]):
        self.batch = batch
        self.columns = columns  # per node index (virtual included), -1 when constant
        self.variables = np.flatnonzero(columns >= 0)
        self.huber = huber_threshold

    def errors(self, state) -> np.ndarray:
        R, t = state
        b = self.batch
        Rij, tij = se3_compose(*se3_inverse(R[b.ii], t[b.ii]), R[b.jj], t[b.jj])
        return se3_log(*se3_compose(b.Zinv_R, b.Zinv_t, Rij, tij))

    def _robust(self, whitened: np.ndarray) -> np.ndarray:
        scale = np.ones(len(whitened))
        if self.huber is not None and np.any(self.batch.loop):
            loop = self.batch.loop
            scale[loop] = _huber_scale(np.sum(whitened[loop] ** 2, axis=1), self.huber)
        return scale

    def residuals(self, state) -> np.ndarray:
        whitened = np.einsum("fab,fb->fa", self.batch.W, self.errors(state))
        return (whitened * self._robust(whitened)[:, None]).ravel()

    def linearize(self, state):
        R, t = state
        b = self.batch
        e = self.errors(state)
        whitened = np.einsum("fab,fb->fa", b.W, e)
        scale = self._robust(whitened)
        WJ = (b.W @ se3_right_jacobian_inverse(e)) * scale[:, None, None]
        Ji = -WJ @ se3_adjoint(*se3_compose(*se3_inverse(R[b.jj], t[b.jj]), R[b.ii], t[b.ii]))

        rows, cols, data = [], [], []
        factor_rows = 6 * np.arange(len(e))
        for blocks, nodes in ((WJ, b.jj), (Ji, b.ii)):
            col = self.columns[nodes]
            keep = col >= 0
            rows.append(np.broadcast_to((factor_rows[keep])[:, None, None] + _BLOCK[None, :, None],
                                        (keep.sum(), 6, 6)).ravel())
            cols.append(np.broadcast_to((6 * col[keep])[:, None, None] + _BLOCK[None, None, :],
                                        (keep.sum(), 6, 6)).ravel())
            data.append(blocks[keep].ravel())
        J = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(6 * len(e), 6 * len(self.variables)),
        )
        return (whitened * scale[:, None]).ravel(), J

    def retract(self, state, dx: np.ndarray):
        R, t = state
        dR, dt = se3_exp(dx.reshape(-1, 6))
        v = self.variables
        R_new, t_new = R.copy(), t.copy()
        R_new[v] = R[v] @ dR
        t_new[v] = t[v] + np.einsum("nij,nj->ni", R[v], dt)
        return R_new, t_new


class PoseGraph:
    """Factor graph of per-ping poses.

    With ``node_stride > 1`` only every n-th ping becomes a node; the others
    are anchored to the preceding node through their dead-reckoning offset,
    loop closures are moved onto the anchors and ``trajectory()`` expands the
    solution back to every ping.
    """

    def __init__(self, cfg: Optional[GraphConfig] = None, estimation: Optional[EstimationConfig] = None):
        self.cfg = cfg or GraphConfig()
        self.estimation = estimation or EstimationConfig()
        self.nodes: Dict[int, PoseNode] = {}
        self.factors: List[Factor] = []
        self._anchors: Dict[int, Tuple[int, Pose]] = {}
        self._pending: List[int] = []
        self._solves = 0

    # structure ------------------------------------------------------------
    @property
    def fixed_node(self) -> Optional[int]:
        return next((n.node_id for n in self.nodes.values() if n.fixed), None)

    def add_node(self, node_id: int, estimate: Pose, fixed: bool = False) -> PoseNode:
        if node_id in self.nodes:
            raise PoseGraphError(f"Node {node_id} already exists")
        if fixed and self.fixed_node is not None:
            raise PoseGraphError(f"Node {self.fixed_node} is already fixed; a graph has exactly one fixed node")
        node = PoseNode(node_id, estimate, fixed)
        self.nodes[node_id] = node
        self._anchors[node_id] = (node_id, Pose.identity())
        return node

    def add_factor(self, kind: FactorKind, endpoints: Sequence[int], measured: Pose, covariance: np.ndarray) -> int:
        for node_id in endpoints:
            if node_id not in self.nodes:
                raise PoseGraphError(f"Unknown node {node_id}")
        self.factors.append(Factor(kind, tuple(endpoints), measured, covariance))
        factor_id = len(self.factors) - 1
        self._pending.append(factor_id)
        return factor_id

    def add_odometry_chain(self, trajectory: Sequence[Ping]) -> List[Factor]:
        """Chain consecutive (retained) pings with their dead-reckoning relative poses."""
        if self.nodes:
            raise PoseGraphError("The odometry chain has already been added")
        seen: Set[int] = set()
        for p in trajectory:
            if p.ping_id in seen:
                raise PoseGraphError(f"Duplicate ping_id {p.ping_id} in the odometry chain")
            seen.add(p.ping_id)
        if any(b.time < a.time for a, b in zip(trajectory, trajectory[1:])):
            raise PoseGraphError("Pings must be time-ordered")
        if not trajectory:
            return []

        stride = self.cfg.node_stride
        retained = set(range(0, len(trajectory), stride)) | {len(trajectory) - 1}
        factors: List[Factor] = []
        previous: Optional[Ping] = None
        for k, ping in enumerate(trajectory):
            if k not in retained:
                self._anchors[ping.ping_id] = (previous.ping_id, relative(previous.dr_pose, ping.dr_pose))
                continue
            self.add_node(ping.ping_id, ping.dr_pose, fixed=previous is None)
            if previous is not None:
                cov = odometry_covariance(previous.dr_pose.distance_to(ping.dr_pose), self.estimation)
                fid = self.add_factor(FactorKind.ODOMETRY, (previous.ping_id, ping.ping_id),
                                      relative(previous.dr_pose, ping.dr_pose), cov)
                factors.append(self.factors[fid])
            previous = ping
        logger.info(f"Odometry chain: {len(self.nodes)} nodes, {len(factors)} factors (stride {stride})")
        return factors

    def add_loop_closure(self, c: LoopClosureConstraint) -> Optional[int]:
        """Insert a converged constraint; non-converged ones are rejected with ``None``."""
        if not c.converged:
            logger.warning(f"Rejected loop closure {c.ping_i}->{c.ping_j}: {c.rejected or 'not converged'}")
            return None
        for ping_id in (c.ping_i, c.ping_j):
            if ping_id not in self._anchors:
                raise PoseGraphError(f"Loop closure refers to unknown node {ping_id}")
        a, offset_i = self._anchors[c.ping_i]
        b, offset_j = self._anchors[c.ping_j]
        if a == b:
            logger.warning(f"Loop closure {c.ping_i}->{c.ping_j} falls inside one node; skipped")
            return None
        measured = offset_i * c.relative_pose * offset_j.inverse()
        Ad = se3_adjoint(offset_j.rotation, offset_j.position)[0]
        cov = Ad @ (c.covariance * self.cfg.loop_closure_scale) @ Ad.T
        return self.add_factor(FactorKind.LOOP_CLOSURE, (a, b), measured, cov)

    def add_prior(self, node_id: int, pose: Pose, covariance: np.ndarray) -> int:
        return self.add_factor(FactorKind.PRIOR, (node_id,), pose, covariance)

    def loop_closure_count(self) -> int:
        return sum(f.kind == FactorKind.LOOP_CLOSURE for f in self.factors)

    def factor_error(self, factor_id: int) -> np.ndarray:
        """Tangent-space error of one factor at the current estimates."""
        f = self.factors[factor_id]
        T_i = self.nodes[f.source].estimate if f.source is not None else Pose.identity()
        return (f.measured.inverse() * relative(T_i, self.nodes[f.target].estimate)).log()

    def trajectory(self) -> Dict[int, Pose]:
        """Current estimate of every ping, expanded from its anchor node."""
        return {pid: self.nodes[node].estimate * offset for pid, (node, offset) in self._anchors.items()}

    # solving --------------------------------------------------------------
    def _index(self) -> Dict[int, int]:
        return {nid: k for k, nid in enumerate(self.nodes)}

    def _adjacency(self, index: Dict[int, int]) -> sp.csr_matrix:
        pairs = np.array([(index[f.endpoints[0]], index[f.endpoints[1]])
                          for f in self.factors if len(f.endpoints) == 2], dtype=int).reshape(-1, 2)
        n = len(index)
        return sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))

    def _check_connected(self, adjacency: sp.csr_matrix, index: Dict[int, int]):
        count, labels = csgraph.connected_components(adjacency, directed=False)
        if count > 1:
            ids = np.array(list(index))
            diagnostics = [
                {"component": k, "nodes": int(np.sum(labels == k)), "first_node": int(ids[labels == k][0])}
                for k in range(count)
            ]
            logger.error(f"Pose graph has {count} disconnected components")
            raise PoseGraphError(f"Pose graph is not connected ({count} components)", diagnostics)

    def _window(self, adjacency: sp.csr_matrix, index: Dict[int, int]) -> Set[int]:
        seeds = sorted({index[n] for fid in self._pending for n in self.factors[fid].endpoints})
        if not seeds:
            return set()
        hops = csgraph.dijkstra(adjacency, directed=False, indices=seeds, unweighted=True,
                                limit=self.cfg.incremental_horizon + 0.5, min_only=True)
        return set(np.flatnonzero(np.isfinite(hops)).tolist())

    def _batch(self, index: Dict[int, int], factor_ids: np.ndarray) -> _FactorBatch:
        virtual = len(index)
        chosen = [self.factors[k] for k in factor_ids]
        Zinv_R, Zinv_t = stack_poses(f.measured.inverse() for f in chosen)
        return _FactorBatch(
            ids=factor_ids,
            ii=np.array([index[f.source] if f.source is not None else virtual for f in chosen], dtype=int),
            jj=np.array([index[f.target] for f in chosen], dtype=int),
            Zinv_R=Zinv_R,
            Zinv_t=Zinv_t,
            W=np.array([f.sqrt_information for f in chosen]).reshape(-1, 6, 6),
            loop=np.array([f.kind == FactorKind.LOOP_CLOSURE for f in chosen], dtype=bool),
        )

    def _state(self):
        R, t = stack_poses(n.estimate for n in self.nodes.values())
        return np.concatenate([R, np.eye(3)[None]]), np.concatenate([t, np.zeros((1, 3))])

    def _chi2(self, index: Dict[int, int], state) -> np.ndarray:
        if not self.factors:
            return np.zeros(0)
        batch = self._batch(index, np.arange(len(self.factors)))
        problem = _GraphProblem(batch, np.full(len(index) + 1, -1), None)
        whitened = np.einsum("fab,fb->fa", batch.W, problem.errors(state))
        return np.sum(whitened**2, axis=1)

    def _cost(self, chi2: np.ndarray) -> float:
        """Half the minimized objective; loop closures carry the Huber loss when it is enabled."""
        k = self.cfg.huber_threshold
        if k is None or chi2.size == 0:
            return 0.5 * float(chi2.sum())
        loop = np.array([f.kind == FactorKind.LOOP_CLOSURE for f in self.factors], dtype=bool)
        rho = np.where(loop & (chi2 > k**2), 2.0 * k * np.sqrt(chi2) - k**2, chi2)
        return 0.5 * float(rho.sum())

    def _diagnostics(self, chi2: np.ndarray, limit: int = 20) -> List[Dict]:
        worst = np.argsort(-chi2)[:limit]
        return [
            {"factor": int(k), "kind": self.factors[k].kind.value,
             "endpoints": list(self.factors[k].endpoints), "chi2": float(chi2[k])}
            for k in worst
        ]

    def optimize(self, mode: Optional[str] = None) -> GraphSolution:
        """Levenberg-Marquardt over the non-fixed nodes.

        Batch mode solves every node. Incremental mode re-solves only the
        nodes within ``incremental_horizon`` hops of the factors added since
        the previous call, warm-started from the current estimates, and runs
        a full relinearization every ``relinearize_every`` calls.
        """
        mode = mode or self.cfg.mode
        if not self.nodes:
            raise PoseGraphError("Cannot optimize an empty graph")
        if self.fixed_node is None:
            raise PoseGraphError("The graph has no fixed node")
        index = self._index()
        adjacency = self._adjacency(index)
        self._check_connected(adjacency, index)

        self._solves += 1
        full = mode == "batch" or self._solves % self.cfg.relinearize_every == 0
        active = set(range(len(index))) if full else self._window(adjacency, index)
        active.discard(index[self.fixed_node])

        columns = np.full(len(index) + 1, -1)
        variables = np.array(sorted(active), dtype=int)
        columns[variables] = np.arange(len(variables))
        state = self._state()
        chi2_before = self._chi2(index, state)
        cost_before = self._cost(chi2_before)

        factor_ids = np.array([k for k, f in enumerate(self.factors)
                               if any(columns[index[n]] >= 0 for n in f.endpoints)], dtype=int)
        if variables.size == 0 or factor_ids.size == 0:
            self._pending.clear()
            return GraphSolution(self._poses(), cost_before, cost_before, 0, True, chi2_before.tolist(), "no variables")

        problem = _GraphProblem(self._batch(index, factor_ids), columns, self.cfg.huber_threshold)
        settings = LMSettings(max_iterations=self.cfg.max_iterations, ftol=self.cfg.ftol, gtol=self.cfg.gtol)
        try:
            result = levenberg_marquardt(state, problem.linearize, problem.residuals, problem.retract, settings)
        except np.linalg.LinAlgError as e:
            diagnostics = self._diagnostics(chi2_before)
            logger.error(f"Pose graph normal equations are singular: {e}")
            raise PoseGraphError("Pose graph normal equations are singular or indefinite", diagnostics) from e

        R, t = result.state
        for node_id, pose in zip(self.nodes, unstack_poses(R[:-1], t[:-1])):
            if columns[index[node_id]] >= 0:
                self.nodes[node_id].estimate = pose
        chi2_after = self._chi2(index, self._state())
        cost_after = self._cost(chi2_after)
        self._pending.clear()
        if not result.converged:
            logger.warning(f"Pose graph solve stopped without converging ({result.reason}); best iterate kept")
        logger.info(
            f"Pose graph {'full' if full else 'windowed'} solve: {len(variables)} nodes, "
            f"{len(factor_ids)} factors, cost {cost_before:.4g} -> {cost_after:.4g} in {result.iterations} iterations"
        )
        return GraphSolution(
            poses=self._poses(),
            cost_before=cost_before,
            cost_after=cost_after,
            iterations=result.iterations,
            converged=result.converged,
            chi2=chi2_after.tolist(),
            reason=result.reason,
            variables=len(variables),
        )

    def _poses(self) -> Dict[int, Pose]:
        return {nid: n.estimate for nid, n in self.nodes.items()}

    @classmethod
    def from_factors(cls, nodes: Iterable[PoseNode], factors: Iterable[Factor],
                     cfg: Optional[GraphConfig] = None) -> "PoseGraph":
        """Rebuild a graph from stored nodes and factors (e.g. a g2o snapshot)."""
        graph = cls(cfg)
        for node in nodes:
            graph.add_node(node.node_id, node.estimate, node.fixed)
        for f in factors:
            graph.add_factor(f.kind, f.endpoints, f.measured, f.covariance)
        if graph.fixed_node is None and graph.nodes:
            graph.nodes[next(iter(graph.nodes))].fixed = True
        return graph
