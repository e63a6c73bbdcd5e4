"""End-to-end evaluation of a run against the simulated seafloor and ground truth."""

from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

from src.association.keypoint import Correspondence
from src.config.pipeline_config import PipelineConfig
from src.estimation.relative_pose import estimate_constraints
from src.evaluation.baseline import annotate_correspondences, baselines_for
from src.evaluation.metrics import ate, epe, landmark_consistency, landmark_depth_error
from src.evaluation.projection import reference_image
from src.evaluation.report import ConsistencyMetrics, DepthError, EpeMetrics, MetricReport, TrajectoryMetrics
from src.geometry.pose import Pose
from src.geometry.trajectory import TrajectoryPoint, pose_dict
from src.pose_graph.pose_graph import PoseGraph
from src.simulator.heightmap import Heightmap
from src.sonar.ping import Ping, index_pings
from src.sonar.sonar_image import SonarImage, overlap_check
from src.storage.dataset_storage import rebind_keypoints
from src.utils.logger import logger


def mesh_annotations(images: Dict[str, SonarImage], pings: Dict[int, Ping], reference: Dict[int, Pose],
                     heightmap: Heightmap, cfg: PipelineConfig) -> List[Correspondence]:
    """Annotated correspondences for every overlapping same-side image pair, in processing order."""
    ref_images = {k: reference_image(im, pings, reference, cfg.sonar) for k, im in images.items()}
    annotated: List[Correspondence] = []
    for a, b in combinations(ref_images, 2):
        src, tgt = ref_images[a], ref_images[b]
        if src.side != tgt.side:
            continue
        if not overlap_check(src, tgt, cfg.association.min_overlap_area).overlaps:
            continue
        annotated.extend(annotate_correspondences(src, tgt, pings, reference, heightmap, cfg.sonar, cfg.evaluation))
    return annotated


def slam_from_correspondences(corrs: Sequence[Correspondence], pings: Sequence[Ping],
                              cfg: PipelineConfig) -> Tuple[Dict[int, Pose], int]:
    """Batch pose-graph solution from the given correspondences; returns poses and accepted closures."""
    index = index_pings(pings)
    constraints = estimate_constraints(list(corrs), index, cfg, threads=cfg.run.threads)
    graph = PoseGraph(cfg.graph, cfg.estimation)
    graph.add_odometry_chain(sorted(pings, key=lambda p: p.time))
    accepted = sum(graph.add_loop_closure(c) is not None for c in constraints)
    if accepted:
        graph.optimize("batch")
    return graph.trajectory(), accepted


def depth_prior_ablation(detected: Sequence[Correspondence], pings: Dict[int, Ping], heightmap: Heightmap,
                         cfg: PipelineConfig) -> Dict[str, DepthError]:
    """Landmark depth error of the detected correspondences estimated with and without the depth prior."""
    results = {}
    for label, enabled in (("with_prior", True), ("without_prior", False)):
        estimation = cfg.estimation.model_copy(update={"depth_prior": enabled})
        constraints = estimate_constraints(list(detected), pings, cfg, cfg.run.threads, estimation=estimation)
        landmarks = [c.landmark for c in constraints if c.converged and c.landmark is not None]
        if not landmarks:
            results[label] = DepthError()
            continue
        mean, std, skipped = landmark_depth_error(landmarks, heightmap)
        results[label] = DepthError(mean=mean, std=std, landmarks=len(landmarks) - skipped, outside_map=skipped)
        logger.info(f"Landmark depth error {label}: mean {mean} over {len(landmarks) - skipped} landmarks")
    return results


def evaluate(cfg: PipelineConfig, heightmap: Heightmap, truth: Sequence[TrajectoryPoint], pings: Sequence[Ping],
             images: Dict[str, SonarImage], detected: Sequence[Correspondence], slam: Dict[int, Pose],
             annotated: Optional[Sequence[Correspondence]] = None) -> MetricReport:
    """Compare dead reckoning, SLAM and (when available) annotated-keypoint SLAM.

    ``pings`` carry dead-reckoning poses and ``images`` are canonical images
    geo-referenced with them. Annotated correspondences default to mesh
    annotations under the ground-truth poses.
    """
    index = index_pings(pings)
    reference = pose_dict(truth)
    dead_reckoning = {p.ping_id: p.dr_pose for p in pings}
    detected = [c for c in detected if c.inlier]

    source = "file"
    if annotated is None:
        annotated = mesh_annotations(images, index, reference, heightmap, cfg)
        source = "mesh"
    annotated = list(annotated)
    logger.info(f"Evaluating with {len(detected)} detected and {len(annotated)} annotated ({source}) correspondences")

    trajectories = {"dead_reckoning": dead_reckoning, "slam": slam}
    annotated_slam = None
    if annotated:
        annotated_slam, accepted = slam_from_correspondences(rebind_keypoints(annotated, images), pings, cfg)
        trajectories["slam_annotated"] = annotated_slam
        logger.info(f"Annotated-keypoint SLAM used {accepted} loop closures")

    report = MetricReport(annotated_source=source if annotated else "none")
    for label, poses in trajectories.items():
        metrics = TrajectoryMetrics(label=label, ate=ate(poses, reference))
        if annotated:
            metrics.annotated_consistency = ConsistencyMetrics.from_statistics(
                landmark_consistency(annotated, poses, index, heightmap, cfg.sonar))
            metrics.ate_vs_annotated = ate(poses, annotated_slam)
        if detected:
            metrics.detected_consistency = ConsistencyMetrics.from_statistics(
                landmark_consistency(detected, poses, index, heightmap, cfg.sonar))
        report.trajectories.append(metrics)

    if detected:
        needed = {c.target.image_id for c in detected}
        ref_images = {k: reference_image(images[k], index, reference, cfg.sonar) for k in sorted(needed)}
        baselines = baselines_for(detected, ref_images, index, reference, heightmap, cfg.sonar, cfg.evaluation)
        report.epe = EpeMetrics.from_statistics(epe(detected, baselines))
        report.depth_error = depth_prior_ablation(detected, index, heightmap, cfg)
    return report
