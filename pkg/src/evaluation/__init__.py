# Evaluation Package
from src.evaluation.baseline import BaselineMatcher, annotate_correspondences, baseline_correspondence, baselines_for
from src.evaluation.evaluator import depth_prior_ablation, evaluate, mesh_annotations, slam_from_correspondences
from src.evaluation.metrics import PairStatistics, ate, epe, landmark_consistency, landmark_depth_error, pair_key
from src.evaluation.projection import pixel_rays, project_keypoints, reference_image
from src.evaluation.report import ConsistencyMetrics, DepthError, EpeMetrics, MetricReport, TrajectoryMetrics
