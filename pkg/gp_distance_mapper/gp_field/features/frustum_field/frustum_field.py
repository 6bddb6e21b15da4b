"""
gp_distance_mapper/gp_field/features/frustum_field/frustum_field.py

Per-frame latent distance field built from the current sensor frame only:
  1. Drops NaN/Inf and zero-depth returns.
  2. Projects the cloud into the world frame.
  3. Voxel-downsamples it at the training resolution.
  4. Partitions the training points into a grid of cells of edge `cluster_size` anchored at
     `grid_origin` and trains one LocalGpModel per non-empty cell on the cell's points plus a
     halo of neighbouring points (crowded cells are split into octants).

The field is immutable once built and is discarded after the frame has been integrated.

Functions:
  - build_frustum_field(frame, params, training_resolution) -> FrustumField
  - select_in_frustum(prior_points, field) -> (PointCloud, indices)
  - query_batch(field, points) -> SampleBatch

Usage:
  field = build_frustum_field(frame, KernelParams(), 0.01)
  samples = field.query_batch(stored_points)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from gp_distance_mapper import config
from gp_distance_mapper.geometry.features.frustum.frustum import in_frustum_mask
from gp_distance_mapper.geometry.features.transforms.transforms import (
    CameraIntrinsics,
    Point3,
    PointCloud,
    Pose,
    SensorFrame,
    sanitize_cloud,
    transform_cloud,
)
from gp_distance_mapper.geometry.features.voxel_grid.voxel_grid import pack_indices, voxel_downsample, voxel_indices
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.gp_field.features.local_gp.local_gp import (
    J_MAX,
    FieldSample,
    LocalGpModel,
    SampleBatch,
    evaluate_models,
    fit_partitioned,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FrustumField:
    """Local GP clusters over one frame's downsampled world-frame points."""

    models: Tuple[LocalGpModel, ...]
    model_cells: Tuple[int, ...]
    source_pose: Pose
    intrinsics: CameraIntrinsics
    frame_index: int
    params: KernelParams
    cluster_size: float
    training_cloud: PointCloud

    def __len__(self) -> int:
        return len(self.models)

    @property
    def cluster_count(self) -> int:
        return len(set(self.model_cells))

    @property
    def training_points(self) -> np.ndarray:
        return self.training_cloud.points

    def query_batch(self, points) -> SampleBatch:
        """Distance, gradient and occupancy per point; (d_max, undefined) where no cluster is in reach."""
        return evaluate_models(self.models, points, self.params.d_max)

    def query(self, point: Point3) -> FieldSample:
        return self.query_batch(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]


def _group_cells(points: np.ndarray, cell: float, grid_origin: np.ndarray) -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """(cell key, cell origin, member mask) for every occupied cell, in key order."""
    indices = voxel_indices(points - grid_origin, cell)
    keys = pack_indices(indices)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    unique, starts = np.unique(sorted_keys, return_index=True)
    bounds = np.append(starts, len(sorted_keys))
    groups = []
    for n, key in enumerate(unique):
        members = order[bounds[n]:bounds[n + 1]]
        mask = np.zeros(len(points), dtype=bool)
        mask[members] = True
        groups.append((int(key), grid_origin + indices[members[0]] * cell, mask))
    return groups


def build_frustum_field(
    frame: SensorFrame,
    params: KernelParams,
    training_resolution: float,
    cluster_size: Optional[float] = None,
    workers: int = config.WORKERS,
    j_max: int = J_MAX,
    halo: Optional[float] = None,
    grid_origin: Optional[Point3] = None,
) -> FrustumField:
    """
    Train the Frustum Field of one frame.

    Args:
        frame:               Camera-frame cloud with its world pose and intrinsics.
        params:              Kernel hyperparameters.
        training_resolution: Voxel edge of the training points.
        cluster_size:        Cell edge of the cluster grid; defaults to 3l.
        workers:             Threads used for the per-cluster factorisations.
        halo:                Width of the neighbouring points every cluster also trains on; 3l by default.
        grid_origin:         Anchor of the cluster grid; the world origin by default.

    Returns:
        The field; a frame without valid returns yields an empty field.
    """
    cluster_size = cluster_size or params.d_max
    halo = params.d_max if halo is None else halo
    grid_origin = np.zeros(3) if grid_origin is None else np.asarray(grid_origin, dtype=np.float64)
    cloud, dropped = sanitize_cloud(frame.cloud)
    if dropped:
        logger.debug(f"Frame {frame.index}: dropped {dropped} invalid returns")

    training = voxel_downsample(transform_cloud(cloud, frame.pose), training_resolution)
    if len(training) == 0:
        logger.debug(f"Frame {frame.index}: empty frustum field")
        return FrustumField((), (), frame.pose, frame.intrinsics, frame.index, params, cluster_size, training)

    points = training.points
    groups = _group_cells(points, cluster_size, grid_origin)

    def fit(group):
        _, origin, members = group
        return fit_partitioned(points[members], params, origin, cluster_size, j_max, points[~members], halo)

    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(fit, groups))
    else:
        fitted = [fit(group) for group in groups]

    models: List[LocalGpModel] = []
    cells: List[int] = []
    for (key, _, _), cluster in zip(groups, fitted):
        models.extend(cluster)
        cells.extend([key] * len(cluster))

    logger.debug(
        f"Frame {frame.index}: frustum field of {len(training)} points in {len(groups)} clusters ({len(models)} models)"
    )
    return FrustumField(
        models=tuple(models),
        model_cells=tuple(cells),
        source_pose=frame.pose,
        intrinsics=frame.intrinsics,
        frame_index=frame.index,
        params=params,
        cluster_size=cluster_size,
        training_cloud=training,
    )


def select_in_frustum(prior_points: PointCloud, field: FrustumField) -> Tuple[PointCloud, np.ndarray]:
    """Prior points inside the frame's frustum, with their indices into `prior_points`."""
    if len(prior_points) == 0:
        return PointCloud.empty(), np.zeros(0, dtype=np.int64)
    indices = np.flatnonzero(in_frustum_mask(prior_points.points, field.source_pose, field.intrinsics))
    return prior_points.subset(indices), indices


def query_batch(field: FrustumField, points) -> SampleBatch:
    if isinstance(points, PointCloud):
        points = points.points
    return field.query_batch(points)
