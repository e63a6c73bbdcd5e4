import time

import numpy as np
import pytest

from src.config.pipeline_config import GraphConfig
from src.estimation.relative_pose import LoopClosureConstraint
from src.geometry.pose import Pose, relative
from src.pose_graph import FactorKind, PoseGraph, PoseNode, read_g2o, write_g2o
from src.utils.errors import PoseGraphError
from tests.helpers import make_ping, make_pose, straight_line

CLOSURE_COV = np.eye(6) * 1e-4


def closure(ping_i, ping_j, pose_i, pose_j, converged=True, cov=CLOSURE_COV):
    return LoopClosureConstraint(ping_i, ping_j, relative(pose_i, pose_j), cov, converged, cost=0.0)


def chain(n=10, stride=1, **graph_options):
    pings = straight_line(0, 0.0, np.arange(float(n)), 90.0)
    graph = PoseGraph(GraphConfig(node_stride=stride, **graph_options))
    graph.add_odometry_chain(pings)
    return graph, pings


def drifted_truth(pings, drift=0.03):
    return {p.ping_id: make_pose(drift * p.ping_id, p.dr_pose.position[1]) for p in pings}


def test_dead_reckoning_is_a_fixed_point():
    graph, pings = chain()
    assert graph.fixed_node == 0
    assert len(graph.factors) == 9
    solution = graph.optimize("batch")
    assert solution.cost_after == pytest.approx(0.0, abs=1e-12)
    for p in pings:
        np.testing.assert_allclose(solution.poses[p.ping_id].matrix(), p.dr_pose.matrix(), atol=1e-9)


def test_loop_closure_pulls_trajectory_and_keeps_fixed_node():
    graph, pings = chain()
    fid = graph.add_loop_closure(closure(0, 9, pings[0].dr_pose, make_pose(1.0, 9.0)))
    assert fid is not None
    assert graph.loop_closure_count() == 1
    before = np.linalg.norm(graph.factor_error(fid))
    solution = graph.optimize("batch")
    assert solution.cost_after < solution.cost_before
    assert np.linalg.norm(graph.factor_error(fid)) < before
    assert solution.poses[9].position[0] > 0.9
    np.testing.assert_allclose(solution.poses[0].matrix(), pings[0].dr_pose.matrix())


def test_non_converged_constraint_is_rejected():
    graph, pings = chain()
    assert graph.add_loop_closure(closure(0, 9, pings[0].dr_pose, pings[9].dr_pose, converged=False)) is None
    assert graph.loop_closure_count() == 0
    with pytest.raises(PoseGraphError):
        graph.add_loop_closure(closure(0, 99, pings[0].dr_pose, pings[9].dr_pose))


def test_solution_is_equivariant_to_a_global_transform():
    G = Pose.from_xyz_rpy(100.0, -50.0, 3.0, 2.0, -1.0, 40.0)
    results = []
    for transform in (Pose.identity(), G):
        pings = [p.with_pose(transform * p.dr_pose) for p in straight_line(0, 0.0, np.arange(10.0), 90.0)]
        graph = PoseGraph(GraphConfig())
        graph.add_odometry_chain(pings)
        graph.add_loop_closure(closure(0, 9, make_pose(0.0, 0.0), make_pose(1.0, 9.0)))
        results.append(graph.optimize("batch").poses)
    plain, moved = results
    for ping_id, pose in plain.items():
        np.testing.assert_allclose((G * pose).matrix(), moved[ping_id].matrix(), atol=1e-6)


def test_incremental_solves_agree_with_batch():
    options = dict(incremental_horizon=5, relinearize_every=3)
    pairs = [(0, 29), (5, 25), (10, 20)]
    batch, pings = chain(30, **options)
    incremental, _ = chain(30, **options)
    truth = drifted_truth(pings)
    # settle the odometry chain so later windows only cover new closures
    incremental.optimize("batch")

    variables = []
    for i, j in pairs:
        c = closure(i, j, truth[i], truth[j], cov=np.eye(6) * 1e-3)
        batch.add_loop_closure(c)
        incremental.add_loop_closure(c)
        variables.append(incremental.optimize("incremental").variables)
    assert variables[0] < 29
    assert variables[1] == 29
    assert variables[2] < 29

    expected = batch.optimize("batch").poses
    final = incremental.optimize("batch").poses
    for ping_id, pose in expected.items():
        np.testing.assert_allclose(final[ping_id].matrix(), pose.matrix(), atol=1e-4)


def test_node_stride_anchors_and_densifies():
    graph, pings = chain(10, stride=3)
    assert sorted(graph.nodes) == [0, 3, 6, 9]
    trajectory = graph.trajectory()
    assert sorted(trajectory) == list(range(10))
    for p in pings:
        np.testing.assert_allclose(trajectory[p.ping_id].matrix(), p.dr_pose.matrix(), atol=1e-12)

    fid = graph.add_loop_closure(closure(1, 8, pings[1].dr_pose, pings[8].dr_pose))
    assert graph.factors[fid].endpoints == (0, 6)
    np.testing.assert_allclose(graph.factor_error(fid), np.zeros(6), atol=1e-9)
    assert graph.add_loop_closure(closure(1, 2, pings[1].dr_pose, pings[2].dr_pose)) is None


def test_prior_factor_moves_node():
    graph, pings = chain()
    target = make_pose(0.5, 9.0)
    graph.add_prior(9, target, np.eye(6) * 1e-6)
    solution = graph.optimize("batch")
    assert solution.poses[9].position[0] > 0.4


def test_disconnected_graph_reports_components():
    graph = PoseGraph.from_factors([PoseNode(0, Pose.identity(), True), PoseNode(1, make_pose(5.0, 0.0))], [])
    with pytest.raises(PoseGraphError) as info:
        graph.optimize("batch")
    assert len(info.value.diagnostics) == 2


def test_chain_structure_errors():
    graph, pings = chain(3)
    with pytest.raises(PoseGraphError):
        graph.add_odometry_chain(pings)
    with pytest.raises(PoseGraphError):
        PoseGraph().add_odometry_chain([make_ping(0, make_pose()), make_ping(0, make_pose(0.0, 1.0), time=1.0)])
    with pytest.raises(PoseGraphError):
        PoseGraph().add_odometry_chain([make_ping(0, make_pose(), time=2.0), make_ping(1, make_pose(), time=1.0)])
    with pytest.raises(PoseGraphError):
        PoseGraph().optimize()


def test_huber_solve_reports_the_robust_objective():
    graph, pings = chain(huber_threshold=1.0)
    fid = graph.add_loop_closure(closure(0, 9, pings[0].dr_pose, make_pose(5.0, 9.0)))
    solution = graph.optimize("batch")
    chi2 = np.array(solution.chi2)
    assert chi2[fid] > 1.0
    rho = chi2.copy()
    rho[fid] = 2.0 * np.sqrt(chi2[fid]) - 1.0
    assert solution.cost_after == pytest.approx(0.5 * rho.sum())
    assert solution.cost_after < 0.5 * chi2.sum()
    assert solution.cost_after < solution.cost_before

    plain, _ = chain()
    plain.add_loop_closure(closure(0, 9, pings[0].dr_pose, make_pose(5.0, 9.0)))
    solution = plain.optimize("batch")
    assert solution.cost_after == pytest.approx(0.5 * sum(solution.chi2))


@pytest.mark.slow
def test_large_chain_with_closures_solves_quickly():
    n = 10_000
    graph, pings = chain(n)
    truth = drifted_truth(pings, drift=1e-4)
    rng = np.random.default_rng(0)
    for i in rng.choice(n - 100, 300, replace=False):
        j = int(i) + int(rng.integers(50, 100))
        assert graph.add_loop_closure(closure(int(i), j, truth[int(i)], truth[j], cov=np.eye(6) * 1e-3)) is not None
    start = time.perf_counter()
    solution = graph.optimize("batch")
    assert time.perf_counter() - start < 60.0
    assert solution.cost_after < solution.cost_before


def test_g2o_round_trip(tmp_path):
    graph, pings = chain(5)
    graph.add_loop_closure(closure(0, 4, pings[0].dr_pose, make_pose(0.2, 4.0)))
    path = write_g2o(graph, tmp_path / "graph.g2o")
    loaded = read_g2o(path, GraphConfig())
    assert sorted(loaded.nodes) == sorted(graph.nodes)
    assert loaded.fixed_node == 0
    assert [f.kind for f in loaded.factors] == [FactorKind.ODOMETRY] * 4 + [FactorKind.LOOP_CLOSURE]
    for original, restored in zip(graph.factors, loaded.factors):
        assert restored.endpoints == original.endpoints
        np.testing.assert_allclose(restored.measured.matrix(), original.measured.matrix(), atol=1e-12)
        np.testing.assert_allclose(restored.covariance, original.covariance, rtol=1e-6)
    for nid, node in graph.nodes.items():
        np.testing.assert_allclose(loaded.nodes[nid].estimate.matrix(), node.estimate.matrix(), atol=1e-12)
