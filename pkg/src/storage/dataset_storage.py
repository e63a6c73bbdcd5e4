import csv
import json
import os
import platform
import sys
from contextlib import contextmanager
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.association.keypoint import Correspondence, Keypoint
from src.estimation.relative_pose import LoopClosureConstraint
from src.geometry.pose import Pose
from src.geometry.trajectory import TrajectoryPoint
from src.pose_graph.g2o import read_g2o, write_g2o
from src.pose_graph.pose_graph import PoseGraph
from src.simulator.heightmap import Heightmap
from src.sonar.ping import Ping
from src.sonar.sonar_image import SonarImage
from src.utils.errors import DatasetError
from src.utils.logger import logger

PathLike = Union[str, Path]

LOCK_NAME = ".lock"
TRAJECTORY_HEADER = ["ping_id", "t", "x", "y", "z", "roll", "pitch", "yaw"]
CORRESPONDENCE_HEADER = ["src_image", "src_row", "src_col", "tgt_image", "tgt_row", "tgt_col", "desc_dist", "inlier"]
CONSTRAINT_HEADER = ["ping_i", "ping_j", "tx", "ty", "tz", "rx", "ry", "rz", "cost", "converged"]
LANDMARK_HEADER = ["ping_i", "ping_j", "x", "y", "z", "converged"]
VERSIONED_PACKAGES = ("numpy", "scipy", "scikit-image", "pydantic", "langgraph", "rich")


def _num(value: float) -> str:
    return repr(float(value))


@contextmanager
def claim_output_dir(path: PathLike) -> Iterator[Path]:
    """Create ``path`` and hold an exclusive lock file in it for the duration of a run."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        fd = os.open(path / LOCK_NAME, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as e:
        raise DatasetError(f"Output directory {path} is in use by another run (remove {LOCK_NAME} if stale)") from e
    except OSError as e:
        raise DatasetError(f"Cannot write to output directory {path}: {e}") from e
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        (path / LOCK_NAME).unlink(missing_ok=True)


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "not installed"
    return versions


class DatasetStorage:
    """Readers and writers for every dataset and result file under one directory."""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def path(self, name: str) -> Path:
        return self.root / name

    def _existing(self, name: str) -> Path:
        path = self.path(name)
        if not path.exists():
            logger.error(f"Missing file {path}")
            raise DatasetError(f"Missing file {path}")
        return path

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    def _write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path

    def _read_csv(self, name: str, header: Sequence[str]) -> List[Dict[str, str]]:
        path = self._existing(name)
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = set(header) - set(reader.fieldnames or [])
            if missing:
                raise DatasetError(f"{path}: missing columns {sorted(missing)}")
            return list(reader)

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def read_json(self, name: str) -> Any:
        path = self._existing(name)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DatasetError(f"Cannot parse {path}: {e}") from e

    # pings ----------------------------------------------------------------
    def write_pings(self, pings: Sequence[Ping], name: str = "pings.jsonl") -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for p in pings:
                record = {
                    "ping_id": p.ping_id,
                    "t": float(p.time),
                    "pose": [float(v) for v in p.dr_pose.to_array()],
                    "altitude": float(p.altitude),
                    "port": [float(v) for v in p.port],
                    "stbd": [float(v) for v in p.starboard],
                }
                if p.line is not None:
                    record["line"] = p.line
                f.write(json.dumps(record) + "\n")
        logger.info(f"Wrote {len(pings)} pings to {path}")
        return path

    def read_pings(self, name: str = "pings.jsonl") -> List[Ping]:
        path = self._existing(name)
        pings = []
        with open(path, encoding="utf-8") as f:
            for n, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    r = json.loads(line)
                    pings.append(Ping(int(r["ping_id"]), float(r["t"]), Pose.from_array(r["pose"]),
                                      float(r["altitude"]), r["port"], r["stbd"], r.get("line")))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise DatasetError(f"{path}:{n}: malformed ping record ({e})") from e
        logger.info(f"Read {len(pings)} pings from {path}")
        return pings

    # trajectories -----------------------------------------------------------
    def write_trajectory(self, trajectory: Sequence[TrajectoryPoint], name: str) -> Path:
        rows = [[p.ping_id, _num(p.time), *(_num(v) for v in p.pose.to_xyz_rpy(degrees=True))] for p in trajectory]
        return self._write_csv(name, TRAJECTORY_HEADER, rows)

    def read_trajectory(self, name: str) -> List[TrajectoryPoint]:
        points = []
        for r in self._read_csv(name, TRAJECTORY_HEADER):
            try:
                pose = Pose.from_xyz_rpy(*(float(r[k]) for k in TRAJECTORY_HEADER[2:]), degrees=True)
                points.append(TrajectoryPoint(int(r["ping_id"]), float(r["t"]), pose))
            except ValueError as e:
                raise DatasetError(f"{self.path(name)}: malformed trajectory row {r}") from e
        return points

    # heightmap --------------------------------------------------------------
    def _write_grid(self, name: str, heightmap: Heightmap, values: np.ndarray) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        x0, y0 = heightmap.origin
        header = [f"ncols {heightmap.ncols}", f"nrows {heightmap.nrows}", f"x0 {_num(x0)}", f"y0 {_num(y0)}",
                  f"cellsize {_num(heightmap.cell_size)}"]
        body = [" ".join(_num(v) for v in row) for row in values]
        path.write_text("\n".join(header + body) + "\n", encoding="utf-8")
        return path

    def _read_grid(self, name: str):
        path = self._existing(name)
        lines = path.read_text(encoding="utf-8").splitlines()
        try:
            header = {k: v for k, v in (line.split() for line in lines[:5])}
            ncols, nrows = int(header["ncols"]), int(header["nrows"])
            origin = np.array([float(header["x0"]), float(header["y0"])])
            cell = float(header["cellsize"])
            grid = np.array([[float(v) for v in line.split()] for line in lines[5:5 + nrows]])
        except (KeyError, ValueError) as e:
            raise DatasetError(f"{path}: malformed ASCII grid ({e})") from e
        if grid.shape != (nrows, ncols):
            raise DatasetError(f"{path}: expected {nrows}x{ncols} values, found {grid.shape}")
        return origin, cell, grid

    def write_heightmap(self, heightmap: Heightmap, name: str = "heightmap.asc") -> Path:
        """Depth grid plus a ``*_reflectivity`` companion with the same header."""
        path = self._write_grid(name, heightmap, heightmap.depth)
        self._write_grid(self._reflectivity_name(name), heightmap, heightmap.reflectivity)
        logger.info(f"Wrote {heightmap.nrows}x{heightmap.ncols} heightmap to {path}")
        return path

    def read_heightmap(self, name: str = "heightmap.asc") -> Heightmap:
        origin, cell, depth = self._read_grid(name)
        if self.exists(self._reflectivity_name(name)):
            _, _, reflectivity = self._read_grid(self._reflectivity_name(name))
        else:
            reflectivity = np.full_like(depth, 0.5)
        return Heightmap(origin, cell, depth, reflectivity)

    @staticmethod
    def _reflectivity_name(name: str) -> str:
        p = Path(name)
        return str(p.with_name(f"{p.stem}_reflectivity{p.suffix}"))

    # correspondences --------------------------------------------------------
    def write_correspondences(self, corrs: Sequence[Correspondence], name: str = "correspondences.csv") -> Path:
        rows = [
            [c.source.image_id, c.source.row, c.source.col, c.target.image_id, c.target.row, c.target.col,
             "" if c.descriptor_distance is None else _num(c.descriptor_distance), int(c.inlier)]
            for c in corrs
        ]
        return self._write_csv(name, CORRESPONDENCE_HEADER, rows)

    def read_correspondences(self, images: Dict[str, SonarImage], name: str = "correspondences.csv",
                             inliers_only: bool = False) -> List[Correspondence]:
        """Correspondences with keypoints re-attached to the given geo-referenced canonical images."""
        corrs = []
        for r in self._read_csv(name, CORRESPONDENCE_HEADER):
            try:
                src = _keypoint(images, r["src_image"], int(r["src_row"]), int(r["src_col"]))
                tgt = _keypoint(images, r["tgt_image"], int(r["tgt_row"]), int(r["tgt_col"]))
                dist = float(r["desc_dist"]) if r["desc_dist"] else None
                inlier = r["inlier"].strip().lower() in ("1", "true", "") if r["inlier"] is not None else True
            except (KeyError, IndexError, ValueError) as e:
                raise DatasetError(f"{self.path(name)}: cannot resolve correspondence row {r} ({e})") from e
            if inliers_only and not inlier:
                continue
            corrs.append(Correspondence(src, tgt, dist, inlier=inlier))
        logger.info(f"Read {len(corrs)} correspondences from {self.path(name)}")
        return corrs

    # constraints and landmarks --------------------------------------------
    def write_constraints(self, constraints: Sequence[LoopClosureConstraint], name: str = "constraints.csv") -> Path:
        rows = []
        sidecar = []
        for c in constraints:
            rotvec = Rotation.from_matrix(c.relative_pose.rotation).as_rotvec()
            rows.append([c.ping_i, c.ping_j, *(_num(v) for v in c.relative_pose.position),
                         *(_num(v) for v in rotvec), _num(c.cost), int(c.converged)])
            sidecar.append({
                "ping_i": c.ping_i,
                "ping_j": c.ping_j,
                "covariance": np.asarray(c.covariance, dtype=float).tolist(),
                "eigenvalues": c.eigenvalues.tolist() if np.all(np.isfinite(c.covariance)) else None,
                "rejected": c.rejected,
            })
        path = self._write_csv(name, CONSTRAINT_HEADER, rows)
        self.write_json(str(Path(name).with_suffix(".json")), sidecar)
        return path

    def read_constraints(self, name: str = "constraints.csv") -> List[LoopClosureConstraint]:
        rows = self._read_csv(name, CONSTRAINT_HEADER)
        sidecar = self.read_json(str(Path(name).with_suffix(".json")))
        if len(sidecar) != len(rows):
            raise DatasetError(f"{self.path(name)}: {len(rows)} rows but {len(sidecar)} covariance entries")
        constraints = []
        for r, extra in zip(rows, sidecar):
            R = Rotation.from_rotvec([float(r[k]) for k in ("rx", "ry", "rz")]).as_matrix()
            pose = Pose.from_rt(R, [float(r[k]) for k in ("tx", "ty", "tz")])
            constraints.append(LoopClosureConstraint(
                int(r["ping_i"]), int(r["ping_j"]), pose, np.array(extra["covariance"], dtype=float),
                converged=r["converged"] == "1", cost=float(r["cost"]), rejected=extra.get("rejected"),
            ))
        return constraints

    def write_landmarks(self, constraints: Sequence[LoopClosureConstraint], name: str = "landmarks.csv") -> Path:
        rows = [[c.ping_i, c.ping_j, *(_num(v) for v in c.landmark), int(c.converged)]
                for c in constraints if c.landmark is not None]
        return self._write_csv(name, LANDMARK_HEADER, rows)

    def read_landmarks(self, name: str = "landmarks.csv", converged_only: bool = True) -> np.ndarray:
        rows = self._read_csv(name, LANDMARK_HEADER)
        points = [[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows
                  if not converged_only or r["converged"] == "1"]
        return np.array(points, dtype=float).reshape(-1, 3)

    # pose graph -------------------------------------------------------------
    def write_graph(self, graph: PoseGraph, name: str = "graph.g2o") -> Path:
        return write_g2o(graph, self.path(name))

    def read_graph(self, name: str = "graph.g2o", cfg=None) -> PoseGraph:
        return read_g2o(self._existing(name), cfg)

    # images -----------------------------------------------------------------
    def export_image(self, image: SonarImage, directory: str = "images") -> Path:
        """16-bit PGM of the image (invalid pixels black) with a JSON sidecar."""
        path = self.path(f"{directory}/{image.image_id}.pgm")
        path.parent.mkdir(parents=True, exist_ok=True)
        pixels = np.nan_to_num(image.pixels, nan=0.0)
        peak = float(pixels.max()) if pixels.size and pixels.max() > 0 else 1.0
        scaled = np.clip(np.round(pixels / peak * 65535.0), 0, 65535).astype(">u2")
        height, width = scaled.shape
        with open(path, "wb") as f:
            f.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
            f.write(scaled.tobytes())
        self.write_json(f"{directory}/{image.image_id}.json", {
            "image_id": image.image_id,
            "side": image.side,
            "line": image.line,
            "first_ping": image.rows[0] if image.rows else None,
            "last_ping": image.rows[-1] if image.rows else None,
            "column_resolution": image.column_resolution,
            "canonical": image.canonical,
            "reversed": image.reversed,
            "intensity_scale": peak,
        })
        return path

    # run bookkeeping --------------------------------------------------------
    def write_manifest(self, command: str, cfg_hash: str, seeds: Dict[str, int], threads: int,
                       timings: Optional[Dict[str, float]] = None, extra: Optional[Dict[str, Any]] = None) -> Path:
        manifest = {
            "command": command,
            "argv": sys.argv,
            "config_hash": cfg_hash,
            "seeds": seeds,
            "threads": threads,
            "versions": package_versions(),
            "stage_timings": {k: round(v, 6) for k, v in (timings or {}).items()},
        }
        manifest.update(extra or {})
        return self.write_json("manifest.json", manifest)

    def write_report(self, report, name: str = "report") -> Path:
        """JSON dump of a metric report plus its flat CSV rows."""
        path = self.path(f"{name}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        rows = [[r["section"], r["trajectory"], r["pair"], r["metric"],
                 "" if r["value"] is None else _num(r["value"]), r["count"]] for r in report.rows()]
        self._write_csv(f"{name}.csv", ["section", "trajectory", "pair", "metric", "value", "count"], rows)
        logger.info(f"Wrote metric report to {path}")
        return path


def _keypoint(images: Dict[str, SonarImage], image_id: str, row: int, col: int) -> Keypoint:
    image = images[image_id]
    if not (0 <= row < image.shape[0] and 0 <= col < image.shape[1]):
        raise IndexError(f"pixel ({row}, {col}) outside {image_id} {image.shape}")
    if image.georef is None:
        raise DatasetError(f"Image {image_id} is not geo-referenced")
    return Keypoint(image_id, row, col, image.side, image.georef[row, col].copy(), ping_id=image.rows[row])


def rebind_keypoints(corrs: Sequence[Correspondence], images: Dict[str, SonarImage]) -> List[Correspondence]:
    """Same pixels with geo-references taken from ``images`` (e.g. dead reckoning instead of truth)."""
    return [
        Correspondence(_keypoint(images, c.source.image_id, c.source.row, c.source.col),
                       _keypoint(images, c.target.image_id, c.target.row, c.target.col),
                       c.descriptor_distance, c.inlier)
        for c in corrs
    ]
