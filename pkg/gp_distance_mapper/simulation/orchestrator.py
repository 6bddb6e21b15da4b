"""
gp_distance_mapper/simulation/orchestrator.py

Evaluation harness of the mapper:
  1. Loads a scene (JSON file or built-in name) or a recorded dataset.
  2. Renders (or reads) every frame and integrates it into an OctreeStore.
  3. Optionally evaluates the field against analytic ground truth after every frame.
  4. Writes map.ply, slice.csv, metrics.csv and metrics.json into the output directory.

Also hosts the resolution sweep (bench) and the query-grid dump.

Usage:
  python -m gp_distance_mapper.orchestrator sim run --scene ball_on_table --out runs/ball
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from gp_distance_mapper import config
from gp_distance_mapper.geometry.features.transforms.transforms import SensorFrame
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.gp_field.features.local_gp.local_gp import SampleBatch
from gp_distance_mapper.mapping.features.fusion.fusion import FusionParams, UpdateStats, integrate_frame
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore, StoreConfig
from gp_distance_mapper.mapping.providers.ply_io import write_ply, write_samples_csv
from gp_distance_mapper.simulation.features.metrics.metrics import MetricsReport, evaluate, rmse
from gp_distance_mapper.simulation.features.renderer.renderer import render_frame, sample_free_space
from gp_distance_mapper.simulation.features.scene.scene import BUILTIN_SCENES, Scene, ground_truth_batch, scene_from_dict
from gp_distance_mapper.simulation.providers.dataset import load_dataset

logger = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).parent / "schemas"
SCENE_SCHEMA = SCHEMA_DIR / "scene.json"
QUERY_GRID_SCHEMA = SCHEMA_DIR / "query_grid.json"

DEFAULT_RESOLUTIONS = (0.01, 0.05, 0.10, 0.15, 0.20, 0.30)
QUERY_COUNT = 2000
QUERY_DISTANCE_RANGE = (0.02, 0.5)
SLICE_SPACING = 0.02

BENCH_COLUMNS = ["resolution", "gp_rmse", "baseline_rmse", "mean_cosine", "update_ms", "query_us", "store_size"]
METRICS_COLUMNS = [
    "frame", "time", "adjusted", "removed", "inserted", "update_ms", "store_size",
    "rmse", "mean_cosine", "surface_rmse", "query_us",
]


@dataclass
class PipelineResult:
    report: MetricsReport
    stats: List[UpdateStats] = field(default_factory=list)
    rows: List[Dict] = field(default_factory=list)
    store: Optional[OctreeStore] = None


def load_scene(source: Union[str, Path], depth_noise: Optional[float] = None) -> Scene:
    """
    Scene from a built-in name (`ball_on_table`, `room`) or a JSON file validated against
    simulation/schemas/scene.json.

    Raises:
        ConfigError: If the file is missing, malformed or fails validation.
    """
    if str(source) in BUILTIN_SCENES:
        scene = BUILTIN_SCENES[str(source)]()
    else:
        scene = scene_from_dict(config.load_json_config(Path(source), SCENE_SCHEMA))
    if depth_noise is not None:
        scene.depth_noise = depth_noise
    return scene


def build_store(kernel: KernelParams, resolution: float, store_doc: Optional[dict] = None) -> OctreeStore:
    return OctreeStore(kernel, resolution, StoreConfig.from_dict(store_doc or {}))


def query_set(scene: Scene, t: float, reach: float, rng: np.random.Generator, count: int = QUERY_COUNT) -> np.ndarray:
    """Free-space query points no farther from the scene than `reach` (the field is capped there)."""
    low, high = QUERY_DISTANCE_RANGE
    return sample_free_space(scene, t, count, rng, distance_range=(low, min(high, reach)))


def grid_points(grid: dict) -> np.ndarray:
    """(count_v * count_u, 3) grid points, u varying fastest."""
    origin = np.asarray(grid["origin"], dtype=np.float64)
    u = np.asarray(grid["axis_u"], dtype=np.float64)
    v = np.asarray(grid["axis_v"], dtype=np.float64)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    i = np.arange(grid["count_u"]) * grid["spacing"]
    j = np.arange(grid["count_v"]) * grid["spacing"]
    jj, ii = np.meshgrid(j, i, indexing="ij")
    return origin + ii.reshape(-1, 1) * u + jj.reshape(-1, 1) * v


def default_slice(store: OctreeStore, spacing: float = SLICE_SPACING) -> dict:
    """Horizontal slice through the middle of the mapped points, padded by the query radius."""
    points = store.export_points().points
    if len(points) == 0:
        return {"origin": [0.0, 0.0, 0.0], "axis_u": [1, 0, 0], "axis_v": [0, 1, 0],
                "spacing": spacing, "count_u": 1, "count_v": 1}
    lo = points.min(axis=0) - store.query_radius
    hi = points.max(axis=0) + store.query_radius
    mid = float(np.median(points[:, 2])) + store.query_radius / 2.0
    counts = np.maximum(np.ceil((hi - lo) / spacing).astype(int), 1)
    return {
        "origin": [float(lo[0]), float(lo[1]), mid],
        "axis_u": [1.0, 0.0, 0.0],
        "axis_v": [0.0, 1.0, 0.0],
        "spacing": spacing,
        "count_u": int(counts[0]),
        "count_v": int(counts[1]),
    }


def dump_query_grid(store: OctreeStore, grid: dict, out_path: Path) -> Tuple[np.ndarray, SampleBatch]:
    points = grid_points(grid)
    samples = store.query_batch(points)
    write_samples_csv(out_path, points, samples)
    logger.info(f"Wrote {len(points)} grid samples to {out_path}")
    return points, samples


def _write_rows(path: Path, columns: Sequence[str], rows: Iterable[Dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def _write_artifacts(result: PipelineResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ply(out_dir / "map.ply", result.store.export_points())
    dump_query_grid(result.store, default_slice(result.store), out_dir / "slice.csv")
    _write_rows(out_dir / "metrics.csv", METRICS_COLUMNS, result.rows)
    (out_dir / "metrics.json").write_text(json.dumps(result.report.as_dict(), indent=2), encoding="utf-8")
    logger.info(f"Artifacts written to {out_dir}")


def run_pipeline(
    source: Union[Scene, Iterable[SensorFrame]],
    resolution: float = config.TRAINING_RESOLUTION,
    eta: Optional[float] = None,
    out_dir: Optional[Path] = None,
    seed: int = config.SEED,
    evaluate_every: int = 0,
    kernel: Optional[KernelParams] = None,
    store: Optional[OctreeStore] = None,
) -> PipelineResult:
    """
    Integrate every frame of a scene (rendered) or of a recorded sequence into a store.

    Args:
        source:         Scene to render, or an iterable of recorded frames.
        resolution:     Training resolution; eta defaults to 5x resolution.
        out_dir:        Where to write artifacts; nothing is written when None.
        seed:           Seed of depth noise and query sampling.
        evaluate_every: Evaluate after every n-th frame (0: only after the last frame).
                        Needs a scene; recorded sequences report NaN accuracy.

    Returns:
        PipelineResult with the final MetricsReport, per-frame stats and metrics rows.
    """
    rng = np.random.default_rng(seed)
    scene = source if isinstance(source, Scene) else None
    if scene is not None:
        kernel = kernel or scene.kernel
        fusion_doc = dict(scene.fusion)
        fusion_doc.pop("training_resolution", None)
        if eta is not None:
            fusion_doc["eta"] = eta
        params = FusionParams.from_dict(fusion_doc, training_resolution=resolution)
        if store is None:
            store = build_store(kernel, resolution, scene.store)
        frames: Iterable[SensorFrame] = (
            render_frame(scene, t, rng, index=i) for i, t in enumerate(scene.frame_times())
        )
    else:
        kernel = kernel or KernelParams()
        params = FusionParams(training_resolution=resolution, eta=eta)
        if store is None:
            store = build_store(kernel, resolution)
        frames = source

    query_rng = np.random.default_rng(seed + 1)
    result = PipelineResult(report=None, store=store)
    last_t = 0.0
    for frame in frames:
        stats = integrate_frame(store, frame, params, kernel)
        result.stats.append(stats)
        last_t = frame.timestamp
        row = {
            "frame": frame.index, "time": frame.timestamp, "adjusted": stats.adjusted,
            "removed": stats.removed, "inserted": stats.inserted, "update_ms": stats.time_ms,
            "store_size": len(store),
        }
        if scene is not None and evaluate_every and frame.index % evaluate_every == 0:
            queries = query_set(scene, frame.timestamp, store.query_radius, query_rng)
            report = evaluate(store, scene, frame.timestamp, queries, stats.time_ms)
            row.update(rmse=report.rmse, mean_cosine=report.mean_cosine, surface_rmse=report.surface_rmse, query_us=report.query_us)
        result.rows.append(row)

    mean_update = float(np.mean([s.time_ms for s in result.stats])) if result.stats else 0.0
    if scene is not None and len(store):
        queries = query_set(scene, last_t, store.query_radius, query_rng)
        result.report = evaluate(store, scene, last_t, queries, mean_update)
    else:
        result.report = MetricsReport(
            rmse=float("nan"), mean_cosine=float("nan"), update_ms=mean_update,
            query_us=0.0, store_size=len(store),
        )
    logger.info(
        f"Pipeline done: {len(result.stats)} frames, store={len(store)}, rmse={result.report.rmse:.4f}, "
        f"surface_rmse={result.report.surface_rmse:.4f}, update={mean_update:.1f} ms"
    )
    if out_dir is not None:
        _write_artifacts(result, Path(out_dir))
    return result


def replay(dataset_dir: Path, resolution: float, out_dir: Optional[Path] = None, kernel: Optional[KernelParams] = None) -> PipelineResult:
    """Integrate a recorded sequence (see simulation/providers/dataset.py)."""
    return run_pipeline(load_dataset(Path(dataset_dir)), resolution=resolution, out_dir=out_dir, kernel=kernel)


def bench(
    scene: Scene,
    resolutions: Sequence[float] = DEFAULT_RESOLUTIONS,
    out_csv: Optional[Path] = None,
    seed: int = config.SEED,
    query_count: int = QUERY_COUNT,
) -> List[Dict]:
    """
    Resolution sweep: map the scene at every training resolution and compare the GP field with
    a nearest-stored-point baseline on one fixed query set within reach of the finest run.
    The lengthscale is raised to the resolution where the scene's is smaller, so sparse
    training points still overlap.
    """
    rows = []
    t_end = float(scene.frame_times()[-1])
    reach = 3.0 * max(scene.kernel.lengthscale, min(resolutions))
    queries = query_set(scene, t_end, reach, np.random.default_rng(seed + 1), query_count)
    truth, _, _ = ground_truth_batch(scene, t_end, queries)
    for resolution in resolutions:
        kernel = KernelParams(
            lengthscale=max(scene.kernel.lengthscale, resolution),
            signal_variance=scene.kernel.signal_variance,
            noise_variance=scene.kernel.noise_variance,
        )
        result = run_pipeline(scene, resolution=resolution, seed=seed, kernel=kernel)
        report = evaluate(result.store, scene, t_end, queries, result.report.update_ms, with_surface=False)
        stored = result.store.export_points().points
        baseline, _ = cKDTree(stored).query(queries)
        rows.append({
            "resolution": resolution,
            "gp_rmse": report.rmse,
            "baseline_rmse": rmse(baseline, truth),
            "mean_cosine": report.mean_cosine,
            "update_ms": report.update_ms,
            "query_us": report.query_us,
            "store_size": report.store_size,
        })
        logger.info(f"bench res={resolution}: gp_rmse={report.rmse:.4f} baseline_rmse={rows[-1]['baseline_rmse']:.4f}")
    if out_csv is not None:
        _write_rows(Path(out_csv), BENCH_COLUMNS, rows)
    return rows


def load_query_grid(path: Path) -> dict:
    return config.load_json_config(Path(path), QUERY_GRID_SCHEMA)
