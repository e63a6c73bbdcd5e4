import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from langgraph.graph import END, START, StateGraph

from src.association.descriptor import describe_keypoints
from src.association.detector import detect_corners_grid
from src.association.keypoint import Correspondence, Keypoint
from src.association.matcher import match_near_neighbor, sliding_compatibility_ransac
from src.config.pipeline_config import PipelineConfig
from src.estimation.relative_pose import LoopClosureConstraint, estimate_constraints
from src.geometry.pose import Pose
from src.graph.state import PipelineState
from src.pose_graph.factors import GraphSolution
from src.pose_graph.pose_graph import PoseGraph
from src.sonar.ping import Ping, index_pings
from src.sonar.sonar_image import SonarImage, build_images, canonicalize, georeference, overlap_check
from src.utils.errors import PipelineStageError, SonarSlamError
from src.utils.logger import logger


@dataclass
class RunResult:
    images: Dict[str, SonarImage]
    correspondences: List[Correspondence]
    constraints: List[LoopClosureConstraint]
    graph: PoseGraph
    trajectory: Dict[int, Pose]
    timings: Dict[str, float] = field(default_factory=dict)
    solution: Optional[GraphSolution] = None


class SlamWorkflow:
    """
    Per-image SLAM workflow built on a LangGraph state graph.
    Images are fed in survey-line order; every image is matched against the
    already processed images it overlaps, and the resulting loop closures
    update one shared pose graph.
    """

    def __init__(self, cfg: PipelineConfig, pings: Sequence[Ping]):
        self.cfg = cfg
        self.pings = sorted(pings, key=lambda p: p.time)
        self.index = index_pings(self.pings)
        self.sensor_offset = cfg.sonar.sensor_offset_pose()
        self.graph = PoseGraph(cfg.graph, cfg.estimation)
        self.graph.add_odometry_chain(self.pings)
        self.processed: Dict[str, SonarImage] = {}
        self.keypoints: Dict[str, List[Keypoint]] = {}
        self.reference_heading: Optional[np.ndarray] = None
        self.timings: Dict[str, float] = {}

    def create_workflow(self):
        """Create the per-image workflow graph"""
        workflow = StateGraph(PipelineState)

        workflow.add_node("canonicalize", self._timed("canonicalize", self.canonicalize_node))
        workflow.add_node("georeference", self._timed("georeference", self.georeference_node))
        workflow.add_node("find_overlaps", self._timed("find_overlaps", self.find_overlaps_node))
        workflow.add_node("associate", self._timed("associate", self.associate_node))
        workflow.add_node("estimate", self._timed("estimate", self.estimate_node))
        workflow.add_node("update_graph", self._timed("update_graph", self.update_graph_node))

        workflow.add_edge(START, "canonicalize")
        workflow.add_conditional_edges("canonicalize", self.check_error, {"ok": "georeference", "failed": END})
        workflow.add_conditional_edges("georeference", self.check_error, {"ok": "find_overlaps", "failed": END})
        workflow.add_conditional_edges(
            "find_overlaps",
            self.route_overlaps,
            {
                "associate": "associate",
                "no_overlap": "update_graph",
                "failed": END
            }
        )
        workflow.add_conditional_edges(
            "associate",
            self.route_matches,
            {
                "estimate": "estimate",
                "no_matches": "update_graph",
                "failed": END
            }
        )
        workflow.add_conditional_edges("estimate", self.check_error, {"ok": "update_graph", "failed": END})
        workflow.add_edge("update_graph", END)

        return workflow.compile()

    def _timed(self, stage: str, node):
        """Wrap a node with stage timing and typed-error capture"""
        def run(state: PipelineState) -> PipelineState:
            start = time.perf_counter()
            try:
                state = node(state)
            except SonarSlamError as e:
                state.set_error(stage, str(e))
            elapsed = time.perf_counter() - start
            state.add_timing(stage, elapsed)
            self.timings[stage] = self.timings.get(stage, 0.0) + elapsed
            return state
        return run

    # routing ------------------------------------------------------------
    def check_error(self, state: PipelineState) -> str:
        return "failed" if state.error else "ok"

    def route_overlaps(self, state: PipelineState) -> str:
        if state.error:
            return "failed"
        if not state.overlaps:
            logger.info(f"No processed image overlaps {state.image_id}")
            return "no_overlap"
        return "associate"

    def route_matches(self, state: PipelineState) -> str:
        if state.error:
            return "failed"
        return "estimate" if state.correspondences else "no_matches"

    # nodes --------------------------------------------------------------
    def canonicalize_node(self, state: PipelineState) -> PipelineState:
        logger.info(f"Canonicalizing {state.image_id}")
        state.update_image(canonicalize(state.image, self.index, self.cfg.sonar.canonical_resolution))
        return state

    def georeference_node(self, state: PipelineState) -> PipelineState:
        image = georeference(state.image, self.index, self.sensor_offset)
        heading = image.mean_heading(self.index)
        if self.reference_heading is None:
            self.reference_heading = heading
        state.update_image(replace(image, reversed=bool(heading @ self.reference_heading < 0)))
        return state

    def find_overlaps_node(self, state: PipelineState) -> PipelineState:
        overlaps = []
        for image_id, other in self.processed.items():
            # no cross-side matching
            if other.side != state.image.side:
                continue
            report = overlap_check(other, state.image, self.cfg.association.min_overlap_area)
            if report.overlaps:
                overlaps.append(image_id)
        state.update_overlaps(overlaps)
        return state

    def _keypoints(self, image: SonarImage) -> List[Keypoint]:
        if image.image_id not in self.keypoints:
            detected = detect_corners_grid(image, self.cfg.association)
            self.keypoints[image.image_id] = describe_keypoints(image, detected)
            logger.info(f"{image.image_id}: {len(self.keypoints[image.image_id])} described keypoints")
        return self.keypoints[image.image_id]

    def associate_node(self, state: PipelineState) -> PipelineState:
        """Match every overlapping processed image (source) against the new image (target)"""
        target_kps = self._keypoints(state.image)
        correspondences: List[Correspondence] = []
        for image_id in state.overlaps:
            source = self.processed[image_id]
            candidates = match_near_neighbor(self._keypoints(source), target_kps, self.cfg.association)
            mirror = state.image.shape[0] if source.reversed != state.image.reversed else None
            inliers = sliding_compatibility_ransac(candidates, self.cfg.association, mirror_target_rows=mirror)
            logger.info(f"{image_id} -> {state.image_id}: {len(inliers)} correspondences")
            correspondences.extend(inliers)
        state.update_correspondences(correspondences)
        return state

    def estimate_node(self, state: PipelineState) -> PipelineState:
        constraints = estimate_constraints(state.correspondences, self.index, self.cfg, threads=self.cfg.run.threads)
        state.update_constraints(constraints)
        return state

    def update_graph_node(self, state: PipelineState) -> PipelineState:
        factor_ids = [fid for fid in (self.graph.add_loop_closure(c) for c in state.constraints) if fid is not None]
        state.factor_ids = factor_ids
        if factor_ids:
            self.graph.optimize()
        self.processed[state.image_id] = state.image
        return state

    # driver -------------------------------------------------------------
    def run(self, images: Optional[Sequence[SonarImage]] = None) -> RunResult:
        """Process every image in survey-line order, then run a final batch solve"""
        images = list(images) if images is not None else build_images(self.pings, self.cfg.sonar)
        app = self.create_workflow()
        correspondences: List[Correspondence] = []
        constraints: List[LoopClosureConstraint] = []
        for image in images:
            logger.info(f"Executing workflow for image {image.image_id}")
            result = PipelineState(**app.invoke(PipelineState(image=image)))
            if result.error:
                raise PipelineStageError(result.failed_stage, f"{result.image_id}: {result.error}")
            correspondences.extend(result.correspondences)
            constraints.extend(result.constraints)
            logger.info(f"Image {result.image_id} done: {result.to_dict()}")

        solution = None
        if self.graph.loop_closure_count():
            start = time.perf_counter()
            try:
                solution = self.graph.optimize("batch")
            except SonarSlamError as e:
                raise PipelineStageError("final_solve", str(e)) from e
            self.timings["final_solve"] = time.perf_counter() - start
        else:
            logger.warning("No loop closures were accepted; the output trajectory is dead reckoning")
        return RunResult(dict(self.processed), correspondences, constraints, self.graph,
                         self.graph.trajectory(), dict(self.timings), solution)
