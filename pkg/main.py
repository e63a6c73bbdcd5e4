import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from src.config.pipeline_config import PipelineConfig, config_hash, load_config
from src.estimation.measurement import check_jacobians
from src.evaluation.evaluator import evaluate
from src.evaluation.report import MetricReport
from src.geometry.pose import Pose
from src.geometry.trajectory import TrajectoryPoint, pose_dict, replace_poses, trajectory_from_pings
from src.graph.workflow import SlamWorkflow
from src.pose_graph.g2o import read_g2o, write_g2o
from src.simulator.dataset import simulate_dataset
from src.sonar.ping import Ping, index_pings
from src.sonar.sonar_image import SonarImage, build_images, canonicalize, georeference
from src.storage.dataset_storage import DatasetStorage, claim_output_dir
from src.utils.errors import SonarSlamError
from src.utils.logger import Logger, logger

console = Console()

JACOBIAN_TOLERANCE = 1e-5


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file, then environment, then command-line flags"""
    cfg = load_config(args.config)
    return cfg.with_overrides(
        run={"seed": args.seed, "threads": args.threads, "zero_drift": True if args.zero_drift else None},
        graph={"node_stride": args.node_stride},
        estimation={"depth_prior": False if args.no_depth_prior else None},
    )


def _seeds(cfg: PipelineConfig) -> Dict[str, int]:
    return {"bathymetry": cfg.run.seed, "survey": cfg.run.seed + 1, "drift": cfg.drift_seed,
            "ransac": cfg.association.rng_seed}


def dead_reckoning_images(pings: List[Ping], cfg: PipelineConfig) -> Dict[str, SonarImage]:
    """Canonical images geo-referenced with dead reckoning, as the run sees them"""
    index = index_pings(pings)
    images = {}
    for image in build_images(pings, cfg.sonar):
        canonical = canonicalize(image, index, cfg.sonar.canonical_resolution)
        images[image.image_id] = georeference(canonical, index, cfg.sonar.sensor_offset_pose())
    return images


def cmd_simulate(cfg: PipelineConfig, out: Path) -> int:
    with claim_output_dir(out):
        Logger().attach_run_log(out / "run.log")
        logger.info(f"Simulating dataset into {out} (seed {cfg.run.seed})")
        dataset = simulate_dataset(cfg)
        storage = DatasetStorage(out)
        storage.write_heightmap(dataset.heightmap)
        storage.write_trajectory(dataset.truth, "truth.csv")
        storage.write_trajectory(trajectory_from_pings(dataset.pings), "dead_reckoning.csv")
        storage.write_pings(dataset.pings)
        storage.write_json("drift.json", {
            "final_error_m": dataset.drift.final_error,
            "distance_m": dataset.drift.distance,
            "percent": dataset.drift.percent,
            "heading_rate_bias": dataset.drift.heading_rate_bias,
            "velocity_bias": list(dataset.drift.velocity_bias),
        })
        storage.write_manifest("simulate", config_hash(cfg), _seeds(cfg), cfg.run.threads,
                               extra={"config": cfg.model_dump(mode="json")})

    table = Table(title="Simulated dataset")
    table.add_column("Item")
    table.add_column("Value", justify="right")
    table.add_row("Pings", str(len(dataset.pings)))
    table.add_row("Heightmap", f"{dataset.heightmap.nrows} x {dataset.heightmap.ncols}")
    table.add_row("Path length (m)", f"{dataset.drift.distance:.1f}")
    table.add_row("Final drift (m)", f"{dataset.drift.final_error:.2f} ({dataset.drift.percent:.3f}%)")
    console.print(table)
    return 0


def cmd_run(cfg: PipelineConfig, dataset: Path, out: Path, export_images: bool = False) -> int:
    pings = DatasetStorage(dataset).read_pings()
    with claim_output_dir(out):
        Logger().attach_run_log(out / "run.log")
        logger.info(f"Running SLAM on {dataset} ({len(pings)} pings) into {out}")
        result = SlamWorkflow(cfg, pings).run()
        storage = DatasetStorage(out)
        storage.write_correspondences(result.correspondences)
        storage.write_constraints(result.constraints)
        storage.write_landmarks(result.constraints)
        storage.write_graph(result.graph)
        ordered = sorted(pings, key=lambda p: p.time)
        storage.write_trajectory(replace_poses(trajectory_from_pings(ordered), result.trajectory), "trajectory.csv")
        if export_images:
            for image in result.images.values():
                storage.export_image(image)
        for stage, seconds in result.timings.items():
            logger.info(f"Stage {stage}: {seconds:.2f} s")
        storage.write_manifest("run", config_hash(cfg), _seeds(cfg), cfg.run.threads, result.timings,
                               extra={"dataset": str(dataset), "config": cfg.model_dump(mode="json")})

    table = Table(title="SLAM run")
    table.add_column("Item")
    table.add_column("Value", justify="right")
    table.add_row("Images", str(len(result.images)))
    table.add_row("Correspondences", str(len(result.correspondences)))
    table.add_row("Constraints accepted", f"{sum(c.converged for c in result.constraints)}/{len(result.constraints)}")
    table.add_row("Loop closures in graph", str(result.graph.loop_closure_count()))
    if result.solution is not None:
        table.add_row("Graph cost", f"{result.solution.cost_before:.4g} -> {result.solution.cost_after:.4g}")
    console.print(table)
    return 0


def print_report(report: MetricReport):
    table = Table(title="Evaluation")
    for column in ("Trajectory", "ATE (m)", "vs annotated (m)", "Annotated consistency (m)",
                   "Detected consistency (m)"):
        table.add_column(column, justify="right")

    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.3f}"

    for t in report.trajectories:
        table.add_row(
            t.label, fmt(t.ate), fmt(t.ate_vs_annotated),
            fmt(t.annotated_consistency.overall if t.annotated_consistency else None),
            fmt(t.detected_consistency.overall if t.detected_consistency else None),
        )
    console.print(table)
    if report.epe is not None and report.epe.overall is not None:
        console.print(f"EPE u/v (px): {report.epe.overall[0]:.2f} / {report.epe.overall[1]:.2f}")
    for label, depth in report.depth_error.items():
        console.print(f"Landmark depth error {label}: {fmt(depth.mean)} m over {depth.landmarks} landmarks")


def cmd_eval(cfg: PipelineConfig, dataset: Path, results: Path, annotated: Optional[Path] = None,
             out: Optional[Path] = None) -> int:
    data = DatasetStorage(dataset)
    pings = data.read_pings()
    heightmap = data.read_heightmap()
    truth = data.read_trajectory("truth.csv")
    images = dead_reckoning_images(pings, cfg)

    run = DatasetStorage(results)
    detected = run.read_correspondences(images, inliers_only=True)
    slam = pose_dict(run.read_trajectory("trajectory.csv"))
    annotated_corrs = None
    if annotated is not None:
        annotated_corrs = DatasetStorage(annotated.parent).read_correspondences(images, annotated.name)

    out = out or results / "eval"
    with claim_output_dir(out):
        Logger().attach_run_log(out / "run.log")
        report = evaluate(cfg, heightmap, truth, pings, images, detected, slam, annotated_corrs)
        storage = DatasetStorage(out)
        storage.write_report(report)
        storage.write_manifest("eval", config_hash(cfg), _seeds(cfg), cfg.run.threads,
                               extra={"dataset": str(dataset), "results": str(results),
                                      "annotated": str(annotated) if annotated else None})
    print_report(report)
    return 0


def cmd_jacobian_check(cfg: PipelineConfig, trials: int = 100) -> int:
    """Analytic vs central-difference measurement Jacobians on random geometries"""
    rng = np.random.default_rng(cfg.run.seed)
    offset = cfg.sonar.sensor_offset_pose()
    worst = 0.0
    for _ in range(trials):
        pose = Pose.from_xyz_rpy(*rng.uniform(-50, 50, 2), rng.uniform(0, 100),
                                 *rng.uniform(-10, 10, 2), rng.uniform(-180, 180))
        landmark = pose.transform_point([rng.uniform(-5, 5), rng.uniform(-80, 80), rng.uniform(5, 40)])
        worst = max(worst, check_jacobians(pose, landmark, offset))
    ok = worst < JACOBIAN_TOLERANCE
    console.print(f"Jacobian check over {trials} configurations: max relative error {worst:.3e} "
                  f"({'ok' if ok else 'FAILED'})")
    return 0 if ok else 1


def cmd_graph_solve(cfg: PipelineConfig, g2o_path: Path, out: Path) -> int:
    graph = read_g2o(g2o_path, cfg.graph)
    solution = graph.optimize("batch")
    with claim_output_dir(out):
        write_g2o(graph, out / "optimized.g2o")
        points = [TrajectoryPoint(nid, float(k), pose) for k, (nid, pose) in enumerate(sorted(solution.poses.items()))]
        DatasetStorage(out).write_trajectory(points, "trajectory.csv")
    console.print(f"Optimized {len(graph.nodes)} nodes: cost {solution.cost_before:.6g} -> "
                  f"{solution.cost_after:.6g} in {solution.iterations} iterations ({solution.reason})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("--node-stride", type=int)
    common.add_argument("--no-depth-prior", action="store_true")
    common.add_argument("--zero-drift", action="store_true")

    parser = argparse.ArgumentParser(prog="sss-slam", description="Side-scan sonar SLAM pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic survey dataset")
    run = sub.add_parser("run", parents=[common], help="run SLAM on a dataset")
    run.add_argument("--dataset", type=Path)
    run.add_argument("--export-images", action="store_true", help="also write canonical images as PGM")
    ev = sub.add_parser("eval", parents=[common], help="evaluate run outputs")
    ev.add_argument("--dataset", type=Path)
    ev.add_argument("--results", type=Path)
    ev.add_argument("--annotated", type=Path, help="annotated correspondence CSV")
    jc = sub.add_parser("jacobian-check", parents=[common], help="finite-difference self test")
    jc.add_argument("--trials", type=int, default=100)
    gs = sub.add_parser("graph-solve", parents=[common], help="optimize a g2o-style graph file")
    gs.add_argument("graph", type=Path)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments and run one subcommand; errors map to exit code 1"""
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        dataset = getattr(args, "dataset", None) or Path(cfg.run.dataset)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out or Path(cfg.run.dataset))
        if args.command == "run":
            return cmd_run(cfg, dataset, args.out or Path(cfg.run.out), args.export_images)
        if args.command == "eval":
            return cmd_eval(cfg, dataset, args.results or Path(cfg.run.out), args.annotated, args.out)
        if args.command == "jacobian-check":
            return cmd_jacobian_check(cfg, args.trials)
        if args.command == "graph-solve":
            return cmd_graph_solve(cfg, args.graph, args.out or Path(cfg.run.out) / "graph-solve")
    except SonarSlamError as e:
        logger.error(f"{args.command} failed: {e}")
        for item in getattr(e, "diagnostics", []):
            logger.error(f"  {item}")
        return 1
    finally:
        Logger().detach_run_log()
    return 1


if __name__ == "__main__":
    sys.exit(main())
