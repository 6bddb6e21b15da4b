"""
gp_distance_mapper/simulation/features/metrics/metrics.py

Accuracy and timing metrics of a mapped field against analytic ground truth:
  - distance RMSE over a query set,
  - mean cosine similarity a.b / sqrt(|a|^2 |b|^2) of estimated and true gradients (over
    queries where both are defined),
  - surface RMSE: true distance of every stored training point to the scene,
  - per-point query time and the caller's per-frame update time.
"""

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore
from gp_distance_mapper.simulation.features.scene.scene import Scene, ground_truth_batch

logger = logging.getLogger(__name__)


class MetricsError(ValueError):
    """Raised when metrics cannot be computed (e.g. an empty query set)."""
    pass


@dataclass
class MetricsReport:
    rmse: float
    mean_cosine: float
    update_ms: float
    query_us: float
    store_size: int
    surface_rmse: float = float("nan")
    num_queries: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def rmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    diff = np.asarray(estimate, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if diff.size == 0:
        raise MetricsError("RMSE of an empty set is undefined")
    return float(np.sqrt(np.mean(diff ** 2)))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise a.b / sqrt(|a|^2 |b|^2); scalar for a single pair of vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = np.sum(a * b, axis=-1)
    result = dot / np.sqrt(np.sum(a * a, axis=-1) * np.sum(b * b, axis=-1))
    return float(result) if result.ndim == 0 else result


def surface_rmse(store: OctreeStore, scene: Scene, t: float) -> float:
    """RMSE of the analytic distance of every stored point to the scene at time t."""
    points = store.export_points().points
    if len(points) == 0:
        return float("nan")
    distance, _, _ = ground_truth_batch(scene, t, points)
    return rmse(distance, np.zeros_like(distance))


def evaluate(
    store: OctreeStore,
    scene: Scene,
    t: float,
    query_set: np.ndarray,
    update_ms: float = 0.0,
    with_surface: bool = True,
) -> MetricsReport:
    """
    Compare the store's field with the scene's ground truth at time t.

    Raises:
        MetricsError: If the query set is empty.
    """
    query_set = np.asarray(query_set, dtype=np.float64).reshape(-1, 3)
    if len(query_set) == 0:
        raise MetricsError("Cannot evaluate on an empty query set")

    start = time.perf_counter()
    samples = store.query_batch(query_set)
    query_us = (time.perf_counter() - start) * 1e6 / len(query_set)

    distance, gradient, inside = ground_truth_batch(scene, t, query_set)
    both = samples.defined & ~inside
    mean_cosine = float(np.mean(cosine_similarity(samples.gradient[both], gradient[both]))) if both.any() else float("nan")

    report = MetricsReport(
        rmse=rmse(samples.distance, distance),
        mean_cosine=mean_cosine,
        update_ms=float(update_ms),
        query_us=query_us,
        store_size=len(store),
        surface_rmse=surface_rmse(store, scene, t) if with_surface else float("nan"),
        num_queries=len(query_set),
    )
    logger.debug(f"Metrics at t={t:.2f}: {report}")
    return report
