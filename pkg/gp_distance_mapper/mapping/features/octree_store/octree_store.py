"""
gp_distance_mapper/mapping/features/octree_store/octree_store.py

Persistent training-point store of the Fused Field.

The store is a linear octree over a cubic world box: leaves are the cells of the deepest level,
addressed by their Morton code, so iterating leaves in code order is a depth-first traversal of
the tree. Each leaf keeps its training points (one per training-resolution voxel), their colours
and update tags, and a cache of local GP models that is re-solved lazily the first time a query
touches a leaf marked dirty.

Concurrency: frame updates are serialised by update_session(); while apply_update or
import_points writes, every reader is excluded. Readers (query, query_batch, export_points) run
concurrently and serialise only the lazy re-solves.

Key types:
  - StoreConfig:  world box, leaf size, query radius, halo width and re-solve policy.
  - OctreeStore:  the store itself.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from gp_distance_mapper import config
from gp_distance_mapper.geometry.features.transforms.transforms import GeometryError, Point3, PointCloud
from gp_distance_mapper.geometry.features.voxel_grid.voxel_grid import voxel_keys
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

# Update tags
TAG_STATIC = 0
TAG_FUSED = 1
TAG_INSERTED = 2

TAG_COLORS = {
    TAG_FUSED: (255, 0, 0),
    TAG_INSERTED: (255, 255, 0),
}

_MAX_DEPTH = 21


@dataclass(frozen=True)
class StoreConfig:
    """
    Geometry and policy of the store. leaf_size, query_radius and halo default to 3l of the
    store's kernel. The leaf edge is the smallest power-of-two division of world_edge that is
    at least leaf_size. Leaf models also train on neighbouring points within `halo` of the
    leaf; halo=0 fits every leaf on its own points.
    """

    world_center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    world_edge: float = 20.0
    leaf_size: Optional[float] = None
    query_radius: Optional[float] = None
    halo: Optional[float] = None
    eager_resolve: bool = False
    j_max: int = J_MAX

    def __post_init__(self):
        if not self.world_edge > 0.0:
            raise GeometryError(f"world_edge must be positive, got {self.world_edge}")
        if self.leaf_size is not None and not self.leaf_size > 0.0:
            raise GeometryError(f"leaf_size must be positive, got {self.leaf_size}")
        if self.halo is not None and self.halo < 0.0:
            raise GeometryError(f"halo must be >= 0, got {self.halo}")

    @classmethod
    def from_dict(cls, data: dict) -> "StoreConfig":
        return cls(
            world_center=tuple(data.get("world_center", (0.0, 0.0, 0.0))),
            world_edge=float(data.get("world_edge", 20.0)),
            leaf_size=data.get("leaf_size"),
            query_radius=data.get("query_radius"),
            halo=data.get("halo"),
            eager_resolve=bool(data.get("eager_resolve", False)),
            j_max=int(data.get("j_max", J_MAX)),
        )


class ReadWriteLock:
    """Many readers or one writer; writers wait for active readers to drain."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


def _spread_bits(values: np.ndarray) -> np.ndarray:
    """Insert two zero bits between each of the low 21 bits."""
    v = values.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_codes(cells: np.ndarray) -> np.ndarray:
    """Morton (Z-order) code of non-negative (N, 3) integer cell coordinates."""
    cells = np.asarray(cells).reshape(-1, 3)
    return (
        _spread_bits(cells[:, 0])
        | (_spread_bits(cells[:, 1]) << np.uint64(1))
        | (_spread_bits(cells[:, 2]) << np.uint64(2))
    )


@dataclass(eq=False)
class _Leaf:
    code: int
    lower: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.uint8))
    tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    models: List[LocalGpModel] = field(default_factory=list)
    dirty: bool = True

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class StoreSnapshot:
    """Flat, Morton-ordered copy of the stored points with back-references into the leaves."""

    points: np.ndarray
    colors: np.ndarray
    tags: np.ndarray
    leaf_codes: np.ndarray
    local_index: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def cloud(self) -> PointCloud:
        return PointCloud(self.points, self.colors)


@dataclass
class AddResult:
    added: int = 0
    duplicates: int = 0
    rejected: int = 0


class OctreeStore:
    """
    Octree of training points partitioned into local GP models; the queryable Fused Field.

    Args:
        kernel:       Kernel hyperparameters of every local model.
        resolution:   Training resolution (dedup voxel edge).
        store_config: World box and policy; defaults to a 20 m cube centred on the origin.
        workers:      Threads used when several dirty leaves are re-solved at once.
    """

    def __init__(
        self,
        kernel: Optional[KernelParams] = None,
        resolution: float = config.TRAINING_RESOLUTION,
        store_config: Optional[StoreConfig] = None,
        workers: int = config.WORKERS,
    ):
        if not resolution > 0.0:
            raise GeometryError(f"Training resolution must be positive, got {resolution}.")
        self.kernel = kernel or KernelParams()
        self.resolution = float(resolution)
        self.config = store_config or StoreConfig()
        self.workers = workers

        requested_leaf = self.config.leaf_size or self.kernel.d_max
        self.depth = min(_MAX_DEPTH, max(0, math.floor(math.log2(self.config.world_edge / requested_leaf))))
        self.leaf_edge = self.config.world_edge / (1 << self.depth)
        self.origin = np.asarray(self.config.world_center, dtype=np.float64) - self.config.world_edge / 2.0
        self.query_radius = float(self.config.query_radius or self.kernel.d_max)
        self.halo = float(self.kernel.d_max if self.config.halo is None else self.config.halo)

        self._leaves: Dict[int, _Leaf] = {}
        self._index: Optional[Tuple[np.ndarray, np.ndarray]] = None
        self._lock = ReadWriteLock()
        self._resolve_lock = threading.Lock()
        self._update_mutex = threading.Lock()
        self._changed: List[np.ndarray] = []
        self.rejected_total = 0

    # ------------------------------------------------------------------ bookkeeping

    def __len__(self) -> int:
        return sum(len(leaf) for leaf in self._leaves.values())

    @property
    def leaf_count(self) -> int:
        return len(self._leaves)

    @property
    def dirty_count(self) -> int:
        return sum(1 for leaf in self._leaves.values() if leaf.dirty)

    def _leaves_in_order(self) -> Iterator[_Leaf]:
        for code in sorted(self._leaves):
            yield self._leaves[code]

    def _cells(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Leaf cell coordinates and an inside-world-box mask."""
        cells = np.floor((points - self.origin) / self.leaf_edge).astype(np.int64)
        inside = np.all((cells >= 0) & (cells < (1 << self.depth)), axis=1)
        return cells, inside

    def _leaf_index(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._index is None:
            codes = np.array(sorted(self._leaves), dtype=np.uint64)
            lowers = np.array([self._leaves[int(c)].lower for c in codes]).reshape(-1, 3)
            self._index = (codes, lowers)
        return self._index

    # ------------------------------------------------------------------ mutation

    def _add(self, points: np.ndarray, colors: np.ndarray, tag: int) -> AddResult:
        """Insert points with deduplication; caller holds the write lock."""
        result = AddResult()
        if len(points) == 0:
            return result
        finite = np.all(np.isfinite(points), axis=1)
        cells, inside = self._cells(np.where(finite[:, None], points, 0.0))
        inside &= finite
        result.rejected = int(np.count_nonzero(~inside))
        if result.rejected:
            logger.warning(f"Rejected {result.rejected} points outside the world box")
            self.rejected_total += result.rejected
        points, colors, cells = points[inside], colors[inside], cells[inside]
        if len(points) == 0:
            return result

        codes = morton_codes(cells)
        order = np.argsort(codes, kind="stable")
        unique, starts = np.unique(codes[order], return_index=True)
        bounds = np.append(starts, len(order))
        half_res = self.resolution / 2.0

        for n, code in enumerate(unique):
            members = order[bounds[n]:bounds[n + 1]]
            code = int(code)
            leaf = self._leaves.get(code)
            if leaf is None:
                leaf = _Leaf(code=code, lower=self.origin + cells[members[0]] * self.leaf_edge)
            new_pts = points[members]
            new_keys = voxel_keys(new_pts, self.resolution)

            # one point per voxel, first arrival wins
            _, first = np.unique(new_keys, return_index=True)
            keep = np.zeros(len(new_pts), dtype=bool)
            keep[np.sort(first)] = True
            if len(leaf):
                keep &= ~np.isin(new_keys, voxel_keys(leaf.points, self.resolution))
                near, _ = cKDTree(leaf.points).query(new_pts, distance_upper_bound=half_res)
                keep &= ~(near < half_res)
            candidates = np.flatnonzero(keep)
            if len(candidates) > 1:
                for i, j in sorted(cKDTree(new_pts[candidates]).query_pairs(half_res)):
                    if keep[candidates[i]] and keep[candidates[j]]:
                        keep[candidates[j]] = False

            kept = int(np.count_nonzero(keep))
            result.duplicates += len(new_pts) - kept
            if kept == 0:
                continue
            leaf.points = np.vstack([leaf.points, new_pts[keep]])
            leaf.colors = np.vstack([leaf.colors, colors[members][keep]])
            leaf.tags = np.concatenate([leaf.tags, np.full(kept, tag, dtype=np.int8)])
            leaf.dirty = True
            self._changed.append(leaf.lower)
            if code not in self._leaves:
                self._leaves[code] = leaf
                self._index = None
            result.added += kept
        return result

    def _remove(self, leaf_codes: np.ndarray, local_index: np.ndarray) -> set:
        """Delete points by back-reference; returns the touched leaf codes."""
        touched = set()
        for code in np.unique(leaf_codes):
            leaf = self._leaves[int(code)]
            drop = np.zeros(len(leaf), dtype=bool)
            drop[local_index[leaf_codes == code]] = True
            leaf.points = leaf.points[~drop]
            leaf.colors = leaf.colors[~drop]
            leaf.tags = leaf.tags[~drop]
            leaf.dirty = True
            self._changed.append(leaf.lower)
            touched.add(int(code))
            if len(leaf) == 0:
                del self._leaves[int(code)]
                self._index = None
        return touched

    def apply_update(
        self,
        snapshot: StoreSnapshot,
        removed: np.ndarray,
        moved: np.ndarray,
        moved_points: np.ndarray,
        inserted: PointCloud,
    ) -> Tuple[AddResult, AddResult]:
        """
        Commit one frame update against a snapshot taken under the same update session.

        Args:
            snapshot:     Snapshot the indices refer to.
            removed:      Snapshot indices of points deleted by the dynamic update.
            moved:        Snapshot indices of fused points.
            moved_points: (len(moved), 3) fused positions.
            inserted:     New current-frame points.

        Fused points are re-added before inserted points so they take precedence in dedup.
        Tags of all other points are reset to static.

        Returns:
            Add results of the fused and of the inserted batch.
        """
        removed = np.asarray(removed, dtype=np.int64)
        moved = np.asarray(moved, dtype=np.int64)
        with self._lock.write():
            for leaf in self._leaves.values():
                leaf.tags[:] = TAG_STATIC
            gone = np.concatenate([removed, moved])
            self._remove(snapshot.leaf_codes[gone], snapshot.local_index[gone])
            fused = self._add(np.asarray(moved_points, dtype=np.float64).reshape(-1, 3), snapshot.colors[moved], TAG_FUSED)
            fresh = self._add(inserted.points, inserted.color_array(), TAG_INSERTED)
            self._dirty_neighbours()
            if self.config.eager_resolve:
                self._resolve([leaf for leaf in self._leaves.values() if leaf.dirty])
        return fused, fresh

    def import_points(self, cloud: PointCloud, tag: int = TAG_STATIC) -> AddResult:
        """Warm-start the store from a snapshot cloud."""
        with self._update_mutex, self._lock.write():
            result = self._add(cloud.points, cloud.color_array(), tag)
            self._dirty_neighbours()
            if self.config.eager_resolve:
                self._resolve([leaf for leaf in self._leaves.values() if leaf.dirty])
        logger.info(f"Imported {result.added} points ({result.duplicates} duplicates, {result.rejected} rejected)")
        return result

    def clear(self) -> None:
        with self._lock.write():
            self._leaves.clear()
            self._index = None
            self._changed = []

    # ------------------------------------------------------------------ models

    def _near_leaf_codes(self, lower: np.ndarray) -> np.ndarray:
        """Codes of the leaves whose halo overlaps the leaf at `lower` (itself included)."""
        codes, lowers = self._leaf_index()
        return codes[np.all(np.abs(lowers - lower) <= self.leaf_edge + self.halo, axis=1)]

    def _dirty_neighbours(self) -> None:
        """Mark leaves whose halo reaches a leaf changed by the current write."""
        changed, self._changed = self._changed, []
        if not changed or self.halo <= 0.0 or not self._leaves:
            return
        for lower in np.unique(np.array(changed), axis=0):
            for code in self._near_leaf_codes(lower):
                self._leaves[int(code)].dirty = True

    def _context(self, leaf: _Leaf) -> Optional[np.ndarray]:
        if self.halo <= 0.0:
            return None
        others = [self._leaves[int(c)].points for c in self._near_leaf_codes(leaf.lower) if int(c) != leaf.code]
        return np.vstack(others) if others else np.zeros((0, 3))

    def _fit_leaf(self, leaf: _Leaf, context: Optional[np.ndarray]) -> List[LocalGpModel]:
        return fit_partitioned(
            leaf.points, self.kernel, leaf.lower, self.leaf_edge, self.config.j_max, context, self.halo,
        )

    def _resolve(self, leaves: Sequence[_Leaf]) -> None:
        if not leaves:
            return
        contexts = [self._context(leaf) for leaf in leaves]
        if self.workers > 1 and len(leaves) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                fitted = list(pool.map(self._fit_leaf, leaves, contexts))
        else:
            fitted = [self._fit_leaf(leaf, context) for leaf, context in zip(leaves, contexts)]
        for leaf, models in zip(leaves, fitted):
            leaf.models = models
            leaf.dirty = False
        logger.debug(f"Re-solved {len(leaves)} leaves")

    def _models_near(self, points: np.ndarray) -> List[LocalGpModel]:
        """Models of the leaves whose box intersects the query batch's box grown by the radius."""
        codes, lowers = self._leaf_index()
        if len(codes) == 0 or len(points) == 0:
            return []
        lo = points.min(axis=0) - self.query_radius
        hi = points.max(axis=0) + self.query_radius
        hit = np.all((lowers <= hi) & (lowers + self.leaf_edge >= lo), axis=1)
        leaves = [self._leaves[int(c)] for c in codes[hit]]
        dirty = [leaf for leaf in leaves if leaf.dirty]
        if dirty:
            with self._resolve_lock:
                self._resolve([leaf for leaf in dirty if leaf.dirty])
        return [model for leaf in leaves for model in leaf.models]

    # ------------------------------------------------------------------ reads

    def query_batch(self, points, with_variance: bool = False) -> SampleBatch:
        """
        Distance field samples at arbitrary (N, 3) points, in input order. Points farther than
        the query radius from every stored point get (query_radius, undefined gradient).
        """
        if isinstance(points, PointCloud):
            points = points.points
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        with self._lock.read():
            models = self._models_near(points)
            return evaluate_models(models, points, self.query_radius, with_variance)

    def query(self, point: Point3, with_variance: bool = False) -> FieldSample:
        return self.query_batch(np.asarray(point, dtype=np.float64).reshape(1, 3), with_variance)[0]

    def snapshot(self) -> StoreSnapshot:
        with self._lock.read():
            return self._snapshot()

    def _snapshot(self) -> StoreSnapshot:
        leaves = list(self._leaves_in_order())
        if not leaves:
            return StoreSnapshot(
                points=np.zeros((0, 3)),
                colors=np.zeros((0, 3), dtype=np.uint8),
                tags=np.zeros(0, dtype=np.int8),
                leaf_codes=np.zeros(0, dtype=np.uint64),
                local_index=np.zeros(0, dtype=np.int64),
            )
        return StoreSnapshot(
            points=np.vstack([leaf.points for leaf in leaves]),
            colors=np.vstack([leaf.colors for leaf in leaves]),
            tags=np.concatenate([leaf.tags for leaf in leaves]),
            leaf_codes=np.concatenate([np.full(len(leaf), leaf.code, dtype=np.uint64) for leaf in leaves]),
            local_index=np.concatenate([np.arange(len(leaf)) for leaf in leaves]),
        )

    def export_points(self, color_by_tag: bool = False) -> PointCloud:
        """All stored points in Morton leaf order; optionally recoloured by update tag."""
        snap = self.snapshot()
        colors = snap.colors.copy()
        if color_by_tag:
            for tag, rgb in TAG_COLORS.items():
                colors[snap.tags == tag] = rgb
        return PointCloud(snap.points, colors)

    @contextmanager
    def update_session(self):
        """Serialise frame updates: snapshot, compute, then apply_update, one writer at a time."""
        with self._update_mutex:
            yield self
