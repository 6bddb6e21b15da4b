"""
gp_distance_mapper/mapping/features/fusion/fusion.py

Per-frame update of the Fused Field:
  1. Build the Frustum Field of the frame.
  2. Select the stored points inside the frame's frustum.
  3. Query the Frustum Field at the selected points.
  4. Fuse points within eta of the current surface: p <- p - d * grad d.
  5. Remove points farther than eta that lie in observed free space (nearer to the camera
     than the measured return of their pixel by more than the visibility margin). Points
     occluded by the current surface, or in pixels without a return, are retained.
  6. Insert current points farther than eta_new from every selected stored point.
  7. Commit to the store (voxel dedup, dirty leaves).

Functions:
  - fuse_point(p, sample) -> Point3
  - integrate_frame(store, frame, params, kernel) -> UpdateStats
  - integrate_frames(store, frames, params, kernel) -> UpdateStats
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from gp_distance_mapper import config
from gp_distance_mapper.geometry.features.frustum.frustum import pixel_bins, to_camera
from gp_distance_mapper.geometry.features.transforms.transforms import (
    CameraIntrinsics,
    Point3,
    Pose,
    SensorFrame,
    sanitize_cloud,
)
from gp_distance_mapper.gp_field.features.frustum_field.frustum_field import build_frustum_field, select_in_frustum
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.gp_field.features.local_gp.local_gp import FieldSample, SampleBatch
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore

logger = logging.getLogger(__name__)

ETA_RESOLUTIONS = 5.0
ETA_NEW_RESOLUTIONS = 2.0


@dataclass(frozen=True)
class FusionParams:
    """
    Thresholds of the frame update. eta and insertion_threshold default to 5x and 2x the
    training resolution.
    """

    training_resolution: float = config.TRAINING_RESOLUTION
    eta: Optional[float] = None
    insertion_threshold: Optional[float] = None
    visibility_margin: float = 0.02
    depth_bins: Tuple[int, int] = (160, 120)

    def __post_init__(self):
        if not self.training_resolution > 0.0:
            raise ValueError(f"training_resolution must be > 0, got {self.training_resolution}")
        if self.eta is None:
            object.__setattr__(self, "eta", ETA_RESOLUTIONS * self.training_resolution)
        if self.insertion_threshold is None:
            object.__setattr__(self, "insertion_threshold", ETA_NEW_RESOLUTIONS * self.training_resolution)
        if not self.eta > 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.insertion_threshold > 0.0:
            raise ValueError(f"insertion_threshold must be > 0, got {self.insertion_threshold}")
        if self.visibility_margin < 0.0:
            raise ValueError(f"visibility_margin must be >= 0, got {self.visibility_margin}")
        object.__setattr__(self, "depth_bins", (int(self.depth_bins[0]), int(self.depth_bins[1])))

    @classmethod
    def from_dict(cls, data: dict, training_resolution: Optional[float] = None) -> "FusionParams":
        resolution = training_resolution or data.get("training_resolution", config.TRAINING_RESOLUTION)
        return cls(
            training_resolution=float(resolution),
            eta=data.get("eta"),
            insertion_threshold=data.get("insertion_threshold"),
            visibility_margin=float(data.get("visibility_margin", 0.02)),
            depth_bins=tuple(data.get("depth_bins", (160, 120))),
        )


@dataclass
class UpdateStats:
    """Counts of one (or several summed) frame updates."""

    adjusted: int = 0
    removed: int = 0
    inserted: int = 0
    selected: int = 0
    retained_occluded: int = 0
    covered: int = 0
    skipped_gradient: int = 0
    deduplicated: int = 0
    rejected: int = 0
    dropped: int = 0
    time_ms: float = 0.0

    def __iadd__(self, other: "UpdateStats") -> "UpdateStats":
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def fuse_point(p: Point3, sample: FieldSample) -> np.ndarray:
    """Move p onto the observed surface: p - d * grad d. Undefined gradients leave p unchanged."""
    p = np.asarray(p, dtype=np.float64)
    if not sample.gradient_defined:
        return p.copy()
    return p - sample.distance * sample.gradient


def fuse_points(points: np.ndarray, samples: SampleBatch) -> np.ndarray:
    """Vectorised fuse_point; rows with an undefined gradient are copied unchanged."""
    step = np.where(samples.defined[:, None], samples.distance[:, None] * samples.gradient, 0.0)
    return np.asarray(points, dtype=np.float64) - step


def observed_free_space(
    points_world: np.ndarray,
    returns_cam: np.ndarray,
    pose: Pose,
    intr: CameraIntrinsics,
    bins: Tuple[int, int],
    margin: float,
) -> np.ndarray:
    """
    True for world points that the current frame saw through: their pixel holds a return and
    they are nearer than that return's depth minus `margin`.
    """
    width, height = bins
    nearest = np.full(width * height, np.inf)
    valid, flat = pixel_bins(returns_cam, intr, bins)
    np.minimum.at(nearest, flat[valid], returns_cam[valid, 2])

    cam = to_camera(points_world, pose)
    valid, flat = pixel_bins(cam, intr, bins)
    depth = nearest[np.where(valid, flat, 0)]
    return valid & np.isfinite(depth) & (cam[:, 2] < depth - margin)


def integrate_frame(
    store: OctreeStore,
    frame: SensorFrame,
    params: FusionParams,
    kernel: Optional[KernelParams] = None,
) -> UpdateStats:
    """
    Fuse, clear and extend the store with one sensor frame.

    Every selected stored point ends up in exactly one of adjusted, removed or
    retained_occluded; every current training point in exactly one of covered or
    inserted-candidate (inserted counts those that survived dedup).

    Returns:
        UpdateStats of the frame; all zero (except dropped) when the frame has no valid returns.
    """
    start = time.perf_counter()
    kernel = kernel or store.kernel
    stats = UpdateStats()

    cloud, stats.dropped = sanitize_cloud(frame.cloud)
    if len(cloud) == 0:
        stats.time_ms = (time.perf_counter() - start) * 1e3
        logger.info(f"Frame {frame.index}: no valid returns, store unchanged")
        return stats

    clean = SensorFrame(cloud, frame.pose, frame.intrinsics, frame.timestamp, frame.index)
    with store.update_session():
        field = build_frustum_field(clean, kernel, params.training_resolution, workers=store.workers)
        snapshot = store.snapshot()
        prior, selected = select_in_frustum(snapshot.cloud(), field)
        stats.selected = len(selected)

        samples = field.query_batch(prior.points)
        fuse = samples.distance <= params.eta
        candidates = np.flatnonzero(~fuse)
        free = observed_free_space(
            prior.points[candidates], cloud.points, frame.pose, frame.intrinsics,
            params.depth_bins, params.visibility_margin,
        )
        removed = selected[candidates[free]]
        stats.removed = len(removed)
        stats.retained_occluded = len(candidates) - stats.removed

        moved_points = fuse_points(prior.points[fuse], samples.take(fuse))
        stats.adjusted = int(np.count_nonzero(fuse))
        stats.skipped_gradient = int(np.count_nonzero(fuse & ~samples.defined))

        current = field.training_cloud
        if len(prior):
            nearest, _ = cKDTree(prior.points).query(current.points)
            fresh = nearest > params.insertion_threshold
        else:
            fresh = np.ones(len(current), dtype=bool)
        stats.covered = int(np.count_nonzero(~fresh))

        fused, inserted = store.apply_update(snapshot, removed, selected[fuse], moved_points, current.subset(fresh))

    stats.inserted = inserted.added
    stats.deduplicated = fused.duplicates + inserted.duplicates
    stats.rejected = fused.rejected + inserted.rejected
    stats.time_ms = (time.perf_counter() - start) * 1e3
    logger.info(
        f"Frame {frame.index}: adjusted={stats.adjusted} removed={stats.removed} inserted={stats.inserted} "
        f"store={len(store)} ({stats.time_ms:.1f} ms)"
    )
    return stats


def integrate_frames(
    store: OctreeStore,
    frames: Iterable[SensorFrame],
    params: FusionParams,
    kernel: Optional[KernelParams] = None,
) -> UpdateStats:
    """Integrate frames of several sensors taken at one time step, one after the other."""
    total = UpdateStats()
    for frame in frames:
        total += integrate_frame(store, frame, params, kernel)
    return total
