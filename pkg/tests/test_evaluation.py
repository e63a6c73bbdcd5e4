import numpy as np
import pytest
from pydantic import ValidationError

from src.association.keypoint import Correspondence, Keypoint
from src.config.pipeline_config import EvaluationConfig
from src.evaluation import (
    ConsistencyMetrics,
    MetricReport,
    TrajectoryMetrics,
    annotate_correspondences,
    ate,
    baseline_correspondence,
    baselines_for,
    epe,
    landmark_consistency,
    landmark_depth_error,
    project_keypoints,
    reference_image,
)
from src.simulator.heightmap import Groove, carve_grooves
from src.sonar.ping import index_pings
from src.sonar.sonar_image import SonarImage, georeference
from src.utils.errors import EvaluationError
from tests.helpers import FLOOR_DEPTH, make_pose, straight_line

YS = np.arange(0.0, 30.5, 0.5)


def survey():
    """Line A at x=0 heading north and line B at x=30 heading south; both look at the strip between."""
    line_a = straight_line(0, 0.0, YS, 90.0, line=0)
    line_b = straight_line(100, 30.0, YS[::-1], -90.0, line=1)
    pings = index_pings(line_a + line_b)
    poses = {pid: p.dr_pose for pid, p in pings.items()}
    return line_a, line_b, pings, poses


def canonical(image_id, line, pings, cols=80):
    image = SonarImage(image_id, "starboard", [p.ping_id for p in line], np.ones((len(line), cols)), 0.5,
                       canonical=True, intensity_corrected=True)
    return georeference(image, pings)


def kp(image_id, ping_id, row, col):
    return Keypoint(image_id, row, col, "starboard", np.zeros(3), ping_id=ping_id)


def test_projection_of_keypoint_on_flat_floor(flat_map, sonar):
    _, _, pings, poses = survey()
    points = project_keypoints([kp("A", 10, 10, 19), kp("B", 110, 10, 40)], pings, poses, flat_map, sonar)
    np.testing.assert_allclose(points[0], [9.75, 5.0, FLOOR_DEPTH], atol=0.02)
    np.testing.assert_allclose(points[1], [9.75, 25.0, FLOOR_DEPTH], atol=0.02)


def test_landmark_consistency_measures_pose_error(flat_map, sonar):
    _, _, pings, poses = survey()
    # row 10 of line A is y=5, row 50 of line B is y=5 as well
    corr = Correspondence(kp("A", 10, 10, 19), kp("B", 150, 50, 40), 0.1, inlier=True)
    stats = landmark_consistency([corr], poses, pings, flat_map, sonar)
    assert stats.overall == pytest.approx(0.0, abs=0.03)
    assert stats.counts == {"A|B": 1}

    shifted = dict(poses)
    for pid in range(100, 161):
        shifted[pid] = make_pose(33.0, poses[pid].position[1], yaw_deg=-90.0)
    stats = landmark_consistency([corr], shifted, pings, flat_map, sonar)
    assert stats.overall == pytest.approx(3.0, abs=0.03)


def test_landmark_consistency_counts_ray_misses(flat_map, sonar):
    _, _, pings, poses = survey()
    far = dict(poses)
    far[150] = make_pose(500.0, 5.0, yaw_deg=-90.0)
    corr = Correspondence(kp("A", 10, 10, 19), kp("B", 150, 50, 40), 0.1)
    stats = landmark_consistency([corr], far, pings, flat_map, sonar)
    assert stats.skipped == 1
    assert stats.overall is None


def test_ate():
    reference = {k: make_pose(0.0, float(k)) for k in range(4)}
    assert ate(reference, reference) == 0.0
    moved = {k: make_pose(3.0, float(k) + 4.0, 7.0) for k in range(4)}
    # depth is not part of the horizontal error
    assert ate(moved, reference) == pytest.approx(5.0)
    with pytest.raises(EvaluationError):
        ate({0: reference[0]}, reference)


def test_epe_means_and_skips():
    detected = [
        Correspondence(kp("A", 0, 0, 0), kp("B", 0, 10, 20), 0.1),
        Correspondence(kp("A", 0, 1, 0), kp("B", 0, 12, 20), 0.1),
        Correspondence(kp("A", 0, 2, 0), kp("B", 0, 12, 20), 0.1),
    ]
    baselines = [kp("B", 0, 8, 21), kp("B", 0, 12, 23), None]
    stats = epe(detected, baselines)
    assert stats.per_pair["A|B"] == pytest.approx((1.0, 2.0))
    assert stats.overall == pytest.approx((1.0, 2.0))
    assert stats.counts == {"A|B": 2}
    assert stats.skipped == 1


def test_landmark_depth_error(flat_map):
    mean, std, skipped = landmark_depth_error(
        [np.array([0.0, 0.0, 20.5]), np.array([1.0, 1.0, 19.5]), np.array([900.0, 0.0, 20.0])], flat_map)
    assert mean == pytest.approx(0.5)
    assert std == pytest.approx(0.0)
    assert skipped == 1
    assert landmark_depth_error([np.array([900.0, 0.0, 20.0])], flat_map) == (None, None, 1)


def test_annotations_see_the_same_seafloor_point(flat_map, sonar):
    line_a, line_b, pings, poses = survey()
    a, b = canonical("A", line_a, pings), canonical("B", line_b, pings)
    annotated = annotate_correspondences(a, b, pings, poses, flat_map, sonar, EvaluationConfig(annotation_spacing=12))
    assert len(annotated) == 25
    for c in annotated:
        assert c.inlier and c.descriptor_distance is None
        # ground ranges of both pixels add up to the 30 m line spacing
        assert c.source.col + c.target.col == 59
        assert c.target.row == 60 - c.source.row


def test_baselines_and_epe_of_offset_detections(flat_map, sonar):
    line_a, line_b, pings, poses = survey()
    a, b = canonical("A", line_a, pings), canonical("B", line_b, pings)
    src = [kp("A", line_a[r].ping_id, r, c) for r, c in [(10, 19), (20, 30)]]
    detected = [
        Correspondence(s, kp("B", line_b[60 - s.row + 2].ping_id, 60 - s.row + 2, 59 - s.col + 1), 0.1)
        for s in src
    ]
    baselines = baselines_for(detected, {"A": a, "B": b}, pings, poses, flat_map, sonar)
    assert [(k.row, k.col) for k in baselines] == [(50, 40), (40, 29)]
    single = baseline_correspondence(src[0], poses, pings, flat_map, b, sonar)
    assert (single.row, single.col) == (50, 40)
    stats = epe(detected, baselines)
    assert stats.overall == pytest.approx((2.0, 1.0))


def canonical_col(slant_range, resolution=0.5):
    return int(round(np.sqrt(slant_range**2 - FLOOR_DEPTH**2) / resolution - 0.5))


def test_flat_floor_error_shows_up_across_track(flat_map, sonar):
    """Targets detected where the true seafloor point appears, over a trough the pixel rays do not model."""
    trough = carve_grooves(flat_map, [Groove((15.0, -30.0), (15.0, 50.0), 4.0, 20.0)])
    line_a, line_b, pings, poses = survey()
    a, b = canonical("A", line_a, pings), canonical("B", line_b, pings)
    detected = []
    for row in range(5, 56, 5):
        y = YS[row]
        for x in np.arange(7.0, 24.0, 2.0):
            depth = float(trough.depth_at(np.array([x]), np.array([y]))[0])
            col_a = canonical_col(np.hypot(x, depth))
            col_b = canonical_col(np.hypot(30.0 - x, depth))
            detected.append(Correspondence(kp("A", line_a[row].ping_id, row, col_a),
                                           kp("B", line_b[60 - row].ping_id, 60 - row, col_b), 0.1))

    cfg = EvaluationConfig(baseline_threshold=1.0, baseline_search_radius=10.0)
    baselines = baselines_for(detected, {"A": a, "B": b}, pings, poses, trough, sonar, cfg)
    stats = epe(detected, baselines)
    assert stats.skipped < len(detected) // 2
    along, across = stats.overall
    # every ping plane is exact, so only the lateral placement suffers
    assert along <= 0.5
    assert across > 2.0
    assert along < across


def test_reference_image_uses_given_poses(sonar):
    line_a, _, pings, poses = survey()
    a = canonical("A", line_a, pings)
    moved = {pid: make_pose(2.0, pose.position[1]) for pid, pose in poses.items()}
    ref = reference_image(a, pings, moved, sonar)
    np.testing.assert_allclose(ref.georef[..., 0] - a.georef[..., 0], 2.0)
    np.testing.assert_allclose(ref.georef[..., 1], a.georef[..., 1])


def test_report_rows_and_validation():
    consistency = ConsistencyMetrics(per_pair={"A|B": 0.5}, counts={"A|B": 4}, overall=0.5)
    report = MetricReport(trajectories=[TrajectoryMetrics(label="slam", detected_consistency=consistency, ate=1.5)])
    rows = report.rows()
    assert {"section": "ate", "trajectory": "slam", "pair": "overall", "metric": "rmse_m", "value": 1.5,
            "count": ""} in rows
    assert any(r["pair"] == "A|B" and r["count"] == 4 for r in rows)
    assert report.trajectory("slam").ate == 1.5
    assert report.trajectory("dead_reckoning") is None
    with pytest.raises(ValidationError):
        ConsistencyMetrics(per_pair={"A|B": -1.0})
    with pytest.raises(ValidationError):
        TrajectoryMetrics(label="slam", ate=-1.0)
