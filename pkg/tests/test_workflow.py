import numpy as np
import pytest

from main import main
from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import PipelineConfig
from src.graph.workflow import SlamWorkflow
from src.simulator import simulate_dataset
from src.sonar.sonar_image import SonarImage
from src.storage import DatasetStorage
from src.utils.errors import PipelineStageError
from tests.helpers import straight_line

MINI_TOML = """
[sonar]
max_range = 30.0
bins_per_side = 150
canonical_resolution = 0.25

[survey]
line_count = 2
line_length = 30.0
line_spacing = 10.0
altitude = 8.0

[bathymetry]
cell_size = 0.25
base_depth = 30.0
noise_amplitude = 0.2
mark_count = 10
mark_length = [20.0, 40.0]
margin = 40.0

[simulator]
raw_bins_per_side = 150
speckle_looks = 0

[association]
min_overlap_area = 1e9
"""

OVERLAP_TOML = MINI_TOML.replace("min_overlap_area = 1e9", "min_overlap_area = 50.0")


@pytest.fixture
def isolated_env(monkeypatch):
    monkeypatch.delenv("SSS_SLAM_SEED", raising=False)
    monkeypatch.delenv("SSS_SLAM_THREADS", raising=False)


def test_workflow_without_overlap_keeps_dead_reckoning(mini_config):
    cfg = mini_config.with_overrides(association={"min_overlap_area": 1e9})
    dataset = simulate_dataset(cfg)
    result = SlamWorkflow(cfg, dataset.pings).run()
    assert sorted(result.images) == ["line0_port", "line0_starboard", "line1_port", "line1_starboard"]
    assert all(image.canonical and image.georef is not None for image in result.images.values())
    assert result.correspondences == [] and result.constraints == []
    assert result.solution is None
    assert result.graph.loop_closure_count() == 0
    for ping in dataset.pings:
        np.testing.assert_allclose(result.trajectory[ping.ping_id].matrix(), ping.dr_pose.matrix(), atol=1e-12)
    assert {"canonicalize", "georeference", "find_overlaps", "update_graph"} <= set(result.timings)


def test_workflow_marks_opposite_lines_reversed(mini_config):
    cfg = mini_config.with_overrides(association={"min_overlap_area": 1e9})
    dataset = simulate_dataset(cfg)
    result = SlamWorkflow(cfg, dataset.pings).run()
    assert not result.images["line0_port"].reversed
    assert result.images["line1_port"].reversed


def test_missing_ping_fails_in_canonicalize():
    pings = straight_line(0, 0.0, np.arange(5.0), 90.0, line=0)
    image = SonarImage("line0_port", "port", [0, 1, 99], np.ones((3, 8)), 0.25, line=0)
    with pytest.raises(PipelineStageError) as info:
        SlamWorkflow(PipelineConfig(), pings).run([image])
    assert info.value.stage == "canonicalize"


def test_cli_simulate_run_eval(tmp_path, isolated_env):
    config = tmp_path / "mini.toml"
    config.write_text(MINI_TOML)
    dataset, results = tmp_path / "dataset", tmp_path / "results"

    assert main(["simulate", "--config", str(config), "--out", str(dataset)]) == 0
    for name in ("pings.jsonl", "truth.csv", "dead_reckoning.csv", "heightmap.asc", "manifest.json"):
        assert (dataset / name).exists()

    assert main(["run", "--config", str(config), "--dataset", str(dataset), "--out", str(results)]) == 0
    data, run = DatasetStorage(dataset), DatasetStorage(results)
    dead_reckoning = data.read_trajectory("dead_reckoning.csv")
    trajectory = run.read_trajectory("trajectory.csv")
    assert [p.ping_id for p in trajectory] == [p.ping_id for p in dead_reckoning]
    for a, b in zip(trajectory, dead_reckoning):
        np.testing.assert_allclose(a.pose.matrix(), b.pose.matrix(), atol=1e-9)
    assert run.read_json("manifest.json")["command"] == "run"

    assert main(["eval", "--config", str(config), "--dataset", str(dataset), "--results", str(results)]) == 0
    report = DatasetStorage(results / "eval").read_json("report.json")
    labels = [t["label"] for t in report["trajectories"]]
    assert labels == ["dead_reckoning", "slam"]

    assert main(["graph-solve", str(results / "graph.g2o"), "--out", str(tmp_path / "solved")]) == 0
    assert (tmp_path / "solved" / "optimized.g2o").exists()


def test_cli_reports_errors_as_exit_code(tmp_path, isolated_env):
    assert main(["run", "--dataset", str(tmp_path / "nothing"), "--out", str(tmp_path / "out")]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.toml"), "--out", str(tmp_path / "d")]) == 1


def test_cli_jacobian_check(isolated_env):
    assert main(["jacobian-check", "--trials", "20"]) == 0


def pixel_keypoint(image: SonarImage, row: int, col: int) -> Keypoint:
    return Keypoint(image.image_id, row, col, image.side, image.georef[row, col].copy(), ping_id=image.rows[row])


@pytest.fixture
def planted_matches(monkeypatch):
    """Pairs of starboard pixels that see the same seafloor point, added on top of whatever the detector finds.

    The mini survey images are shorter than one detector cell, so without
    these the run never reaches estimation.
    """
    associate = SlamWorkflow.associate_node

    def associate_node(self, state):
        state = associate(self, state)
        if state.image_id != "line1_starboard" or "line0_starboard" not in state.overlaps:
            return state
        source, target = self.processed["line0_starboard"], state.image
        target_y = np.array([self.index[pid].dr_pose.position[1] for pid in target.rows])
        planted = []
        for row in (10, 30, 50):
            y = self.index[source.rows[row]].dr_pose.position[1]
            tgt_row = int(np.argmin(np.abs(target_y - y)))
            distance = np.linalg.norm(target.georef[tgt_row, :, :2] - source.georef[row, 20, :2], axis=1)
            tgt_col = int(np.nanargmin(distance))
            planted.append(Correspondence(pixel_keypoint(source, row, 20), pixel_keypoint(target, tgt_row, tgt_col),
                                          0.0, inlier=True))
        state.update_correspondences(state.correspondences + planted)
        return state

    monkeypatch.setattr(SlamWorkflow, "associate_node", associate_node)


@pytest.fixture
def overlap_dataset(tmp_path, isolated_env):
    config = tmp_path / "overlap.toml"
    config.write_text(OVERLAP_TOML)
    dataset = tmp_path / "dataset"
    assert main(["simulate", "--config", str(config), "--out", str(dataset), "--zero-drift"]) == 0
    return config, dataset


def test_cli_run_writes_loop_closures(tmp_path, overlap_dataset, planted_matches):
    config, dataset = overlap_dataset
    results = tmp_path / "results"
    assert main(["run", "--config", str(config), "--dataset", str(dataset), "--out", str(results)]) == 0

    run = DatasetStorage(results)
    assert len(run.read_json("constraints.json")) == 3
    constraints = run.read_constraints()
    assert len(constraints) == 3
    accepted = sum(c.converged for c in constraints)
    assert accepted >= 1
    assert run.read_graph().loop_closure_count() == accepted
    assert len(run.read_landmarks()) == accepted
    lines = (results / "correspondences.csv").read_text().splitlines()
    assert len(lines) == 4

    assert main(["eval", "--config", str(config), "--dataset", str(dataset), "--results", str(results)]) == 0
    report = DatasetStorage(results / "eval").read_json("report.json")
    assert report["epe"] is not None


def test_cli_outputs_do_not_depend_on_thread_count(tmp_path, overlap_dataset, planted_matches):
    config, dataset = overlap_dataset
    outputs = {}
    for threads in (1, 3):
        results = tmp_path / f"results_{threads}"
        common = ["--config", str(config), "--threads", str(threads)]
        assert main(["run", *common, "--dataset", str(dataset), "--out", str(results)]) == 0
        assert main(["eval", *common, "--dataset", str(dataset), "--results", str(results)]) == 0
        outputs[threads] = results

    names = ["correspondences.csv", "constraints.csv", "constraints.json", "landmarks.csv", "trajectory.csv",
             "graph.g2o", "eval/report.json", "eval/report.csv"]
    for name in names:
        assert (outputs[1] / name).read_bytes() == (outputs[3] / name).read_bytes(), name

    again = tmp_path / "dataset_again"
    assert main(["simulate", "--config", str(config), "--out", str(again), "--zero-drift", "--threads", "3"]) == 0
    for name in ("pings.jsonl", "truth.csv", "dead_reckoning.csv"):
        assert (dataset / name).read_bytes() == (again / name).read_bytes(), name
