"""
gp_distance_mapper/gp_field/features/local_gp/local_gp.py

Local Gaussian-process distance field over one set of surface training points.

Occupancy is a GP regressed on targets y = 1 at every training point:

    o(x)      = k(x, X) @ alpha,          alpha = (K_XX + sigma_o^2 I)^-1 1
    grad o(x) = sum_j -(x - x_j) / l^2 * k(x, x_j) * alpha_j

and distance is recovered with the reverting function of the SE kernel:

    d(x) = sqrt(-2 l^2 log(o(x) / sigma^2))

The distance gradient is reported as the unit vector normalize(-grad o), which points away
from the nearest surface.

Key functions:
  - build_local_gp(points, params) -> LocalGpModel
  - infer_occupancy(model, x) -> (o, grad o)
  - revert_distance(o, params) -> d
  - query(model, x) -> FieldSample
  - query_variance(model, x) -> variance
  - fit_partitioned(points, params, origin, edge, context, halo) -> [LocalGpModel]
  - evaluate_models(models, points, radius) -> SampleBatch

Raises:
  - FactorizationError when K + sigma_o^2 I cannot be factorised.
  - PartitionRequiredError when a model would hold more than J_MAX points.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from gp_distance_mapper.geometry.features.transforms.transforms import Point3, PointCloud
from gp_distance_mapper.geometry.features.voxel_grid.voxel_grid import voxel_keys
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams, kernel_matrix

logger = logging.getLogger(__name__)

J_MAX = 1024
JITTER = 1e-6
RESIDUAL_TOL = 1e-6
GRADIENT_EPS = 1e-12
MIN_CELL = 1e-6


class FactorizationError(RuntimeError):
    """Raised when the training covariance is not numerically positive definite."""
    pass


class PartitionRequiredError(ValueError):
    """Raised when a single local model is asked to hold more than J_MAX points."""
    pass


@dataclass(frozen=True, eq=False)
class FieldSample:
    """Distance, unit gradient (away from the surface) and occupancy at one query point."""

    distance: float
    gradient: np.ndarray
    occupancy: float
    gradient_defined: bool = True
    variance: Optional[float] = None


@dataclass
class SampleBatch:
    """Array-backed, order-preserving sequence of FieldSample."""

    distance: np.ndarray
    gradient: np.ndarray
    occupancy: np.ndarray
    defined: np.ndarray
    variance: Optional[np.ndarray] = None

    @classmethod
    def sentinel(cls, count: int, distance: float, with_variance: bool = False) -> "SampleBatch":
        """`count` samples that carry no information: distance `distance`, no gradient."""
        return cls(
            distance=np.full(count, float(distance)),
            gradient=np.zeros((count, 3)),
            occupancy=np.zeros(count),
            defined=np.zeros(count, dtype=bool),
            variance=np.full(count, np.nan) if with_variance else None,
        )

    @classmethod
    def concat(cls, batches: Sequence["SampleBatch"]) -> "SampleBatch":
        if not batches:
            return cls.sentinel(0, 0.0)
        variance = None
        if all(b.variance is not None for b in batches):
            variance = np.concatenate([b.variance for b in batches])
        return cls(
            distance=np.concatenate([b.distance for b in batches]),
            gradient=np.concatenate([b.gradient for b in batches]),
            occupancy=np.concatenate([b.occupancy for b in batches]),
            defined=np.concatenate([b.defined for b in batches]),
            variance=variance,
        )

    def __len__(self) -> int:
        return len(self.distance)

    def __getitem__(self, i: int) -> FieldSample:
        variance = None
        if self.variance is not None and not np.isnan(self.variance[i]):
            variance = float(self.variance[i])
        return FieldSample(
            distance=float(self.distance[i]),
            gradient=self.gradient[i].copy(),
            occupancy=float(self.occupancy[i]),
            gradient_defined=bool(self.defined[i]),
            variance=variance,
        )

    def __iter__(self) -> Iterator[FieldSample]:
        for i in range(len(self)):
            yield self[i]

    def take(self, indices) -> "SampleBatch":
        return SampleBatch(
            distance=self.distance[indices],
            gradient=self.gradient[indices],
            occupancy=self.occupancy[indices],
            defined=self.defined[indices],
            variance=None if self.variance is None else self.variance[indices],
        )


def _as_points(points: Union[PointCloud, np.ndarray, Sequence]) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def revert_distances(occupancy: np.ndarray, params: KernelParams) -> np.ndarray:
    """
    Vectorised reverting function. Occupancy at or above sigma^2 maps to 0; non-positive
    occupancy maps to the d_max sentinel.
    """
    occupancy = np.asarray(occupancy, dtype=np.float64)
    positive = occupancy > 0.0
    ratio = np.minimum(np.where(positive, occupancy, 1.0) / params.signal_variance, 1.0)
    distance = np.sqrt(np.maximum(-2.0 * params.lengthscale ** 2 * np.log(ratio), 0.0))
    return np.where(positive, distance, params.d_max)


def revert_distance(occupancy: float, params: KernelParams) -> float:
    return float(revert_distances(np.array([occupancy]), params)[0])


@dataclass(frozen=True, eq=False)
class LocalGpModel:
    """
    A trained local GP: training points, solve vector alpha and the factor of K + sigma_o^2 I.

    The first `core_count` training points are the ones the model is responsible for; the rest
    are halo points borrowed from neighbouring cells. `lower`/`upper` bound the core points.
    """

    training_points: np.ndarray
    alpha: np.ndarray
    params: KernelParams
    factor: Tuple[np.ndarray, bool]
    lower: np.ndarray
    upper: np.ndarray
    core_count: int

    def __len__(self) -> int:
        return len(self.training_points)

    @property
    def core_points(self) -> np.ndarray:
        return self.training_points[:self.core_count]

    def aabb_distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the bounding box of the core points."""
        gap = np.maximum(np.maximum(self.lower - points, points - self.upper), 0.0)
        return np.sqrt(np.einsum("ij,ij->i", gap, gap))

    def occupancy(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Occupancy (N,) and occupancy gradient (N, 3) at (N, 3) query points."""
        points = _as_points(points)
        weights = kernel_matrix(points, self.training_points, self.params) * self.alpha
        occ = weights.sum(axis=1)
        grad = -(points * occ[:, None] - weights @ self.training_points) / self.params.lengthscale ** 2
        return occ, grad

    def variance(self, points: np.ndarray) -> np.ndarray:
        points = _as_points(points)
        k = kernel_matrix(points, self.training_points, self.params)
        reduction = np.einsum("ij,ji->i", k, cho_solve(self.factor, k.T, check_finite=False))
        return np.maximum(self.params.signal_variance - reduction, 0.0)

    def query_batch(self, points, with_variance: bool = False) -> SampleBatch:
        """Every query is answered by this model alone (no gather radius)."""
        points = _as_points(points)
        occ, grad = self.occupancy(points)
        distance = revert_distances(occ, self.params)
        norm = np.linalg.norm(grad, axis=1)
        defined = (occ > 0.0) & (norm >= GRADIENT_EPS)
        gradient = np.zeros_like(grad)
        gradient[defined] = -grad[defined] / norm[defined, None]
        return SampleBatch(
            distance=distance,
            gradient=gradient,
            occupancy=occ,
            defined=defined,
            variance=self.variance(points) if with_variance else None,
        )


def build_local_gp(
    points: Union[PointCloud, np.ndarray],
    params: KernelParams,
    j_max: int = J_MAX,
    core_count: Optional[int] = None,
) -> LocalGpModel:
    """
    Train a local GP on 1 <= J <= j_max distinct points.

    A failed factorisation is retried once with JITTER on the diagonal, but only when
    noise_variance > 0. With zero noise the points are meant to be interpolated exactly, so a
    singular covariance is reported instead of being silently regularised.

    Args:
        core_count: Number of leading points the model is responsible for (default: all).

    Raises:
        ValueError:             If there are no points or they are not finite.
        PartitionRequiredError: If J > j_max; split the points (see fit_partitioned).
        FactorizationError:     If K + sigma_o^2 I is singular (duplicate points with zero noise).
    """
    X = np.array(_as_points(points), dtype=np.float64)
    count = len(X)
    if count < 1:
        raise ValueError("A local GP needs at least one training point.")
    if count > j_max:
        raise PartitionRequiredError(
            f"{count} training points exceed J_max={j_max}; partition them into smaller cells first."
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("Training points must be finite.")
    core = count if core_count is None else int(core_count)
    if not 1 <= core <= count:
        raise ValueError(f"core_count must lie in [1, {count}], got {core_count}.")

    system = kernel_matrix(X, X, params)
    system[np.diag_indices(count)] += params.noise_variance
    try:
        factor = cho_factor(system, lower=True, check_finite=False)
    except LinAlgError as e:
        if params.noise_variance == 0.0:
            raise FactorizationError(
                f"Covariance of {count} points is singular with zero noise (near-duplicate points?); "
                f"set noise_variance > 0 as jitter or downsample the points."
            ) from e
        logger.warning(f"Cholesky failed on {count} points; retrying with jitter {JITTER}.")
        system[np.diag_indices(count)] += JITTER
        try:
            factor = cho_factor(system, lower=True, check_finite=False)
        except LinAlgError as e2:
            raise FactorizationError(f"Cholesky failed on {count} points even with jitter {JITTER}.") from e2

    ones = np.ones(count)
    alpha = cho_solve(factor, ones, check_finite=False)
    residual = np.abs(system @ alpha - ones).max() if np.all(np.isfinite(alpha)) else np.inf
    if residual > RESIDUAL_TOL:
        raise FactorizationError(f"Solve residual {residual:.3e} exceeds {RESIDUAL_TOL} on {count} points.")

    X.setflags(write=False)
    alpha.setflags(write=False)
    return LocalGpModel(
        training_points=X,
        alpha=alpha,
        params=params,
        factor=factor,
        lower=X[:core].min(axis=0),
        upper=X[:core].max(axis=0),
        core_count=core,
    )


def infer_occupancy(model: LocalGpModel, x: Point3) -> Tuple[float, np.ndarray]:
    occ, grad = model.occupancy(np.asarray(x, dtype=np.float64).reshape(1, 3))
    return float(occ[0]), grad[0]


def query(model: LocalGpModel, x: Point3) -> FieldSample:
    return model.query_batch(np.asarray(x, dtype=np.float64).reshape(1, 3))[0]


def query_variance(model: LocalGpModel, x: Point3) -> float:
    return float(model.variance(np.asarray(x, dtype=np.float64).reshape(1, 3))[0])


def _thin(points: np.ndarray, budget: int, spacing: float, limit: float) -> np.ndarray:
    """Keep the first point per voxel, doubling the voxel edge until at most `budget` remain."""
    while len(points) > budget and spacing <= limit:
        _, first = np.unique(voxel_keys(points, spacing), return_index=True)
        points = points[np.sort(first)]
        spacing *= 2.0
    return points[:max(budget, 0)]


def fit_partitioned(
    points: np.ndarray,
    params: KernelParams,
    origin: np.ndarray,
    edge: float,
    j_max: int = J_MAX,
    context: Optional[np.ndarray] = None,
    halo: float = 0.0,
) -> List[LocalGpModel]:
    """
    Build local GPs over the points of one cube, splitting the cube into octants until every
    part fits into j_max points.

    With halo > 0 every model is also trained on the surrounding points (`context`, plus the
    cube's own points outside the part) that lie within `halo` of its cell. Halo points are
    thinned from l/4 spacing upwards until they fit next to the core; a cell keeps at most half
    of j_max for its own points.
    """
    points = _as_points(points)
    if len(points) == 0:
        return []
    origin = np.asarray(origin, dtype=np.float64)

    if halo > 0.0:
        context = np.zeros((0, 3)) if context is None else _as_points(context)
        lo, hi = origin - halo, origin + edge + halo
        context = context[np.all((context >= lo) & (context <= hi), axis=1)]
        fits = len(points) <= j_max // 2 or (len(points) <= j_max and edge < MIN_CELL)
    else:
        fits = len(points) <= j_max

    if fits:
        if halo > 0.0 and len(context):
            ring = _thin(context, j_max - len(points), params.lengthscale / 4.0, 2.0 * (edge + 2.0 * halo))
            return [build_local_gp(np.vstack([points, ring]), params, j_max, core_count=len(points))]
        return [build_local_gp(points, params, j_max)]
    if edge < MIN_CELL:
        raise PartitionRequiredError(f"Cannot split {len(points)} points below a {edge:.1e} m cell.")

    half = edge / 2.0
    octant = ((points >= origin + half).astype(np.int64) * np.array([1, 2, 4])).sum(axis=1)
    models: List[LocalGpModel] = []
    for child in range(8):
        selected = octant == child
        if not selected.any():
            continue
        offset = np.array([child & 1, (child >> 1) & 1, (child >> 2) & 1], dtype=np.float64)
        child_context = np.vstack([context, points[~selected]]) if halo > 0.0 else None
        models.extend(
            fit_partitioned(points[selected], params, origin + half * offset, half, j_max, child_context, halo)
        )
    return models


def evaluate_models(
    models: Sequence[LocalGpModel],
    points: np.ndarray,
    radius: float,
    with_variance: bool = False,
) -> SampleBatch:
    """
    Query a set of local models that together describe one field.

    Only models whose core points lie within `radius` of a query contribute to it. Every model
    is reverted on its own and the nearest surface wins. Queries reached by no model get
    distance `radius` and no gradient; distances are capped at `radius`.
    """
    points = _as_points(points)
    count = len(points)
    batch = SampleBatch.sentinel(count, radius, with_variance)
    if count == 0 or not models:
        return batch

    grad_raw = np.zeros((count, 3))
    hit = np.zeros(count, dtype=bool)

    for model in models:
        idx = np.flatnonzero(model.aabb_distance(points) <= radius)
        if len(idx) == 0:
            continue
        occ, grad = model.occupancy(points[idx])
        distance = revert_distances(occ, model.params)
        better = (occ > 0.0) & (distance < batch.distance[idx])
        if not better.any():
            continue
        winners = idx[better]
        batch.distance[winners] = distance[better]
        batch.occupancy[winners] = occ[better]
        grad_raw[winners] = grad[better]
        hit[winners] = True
        if batch.variance is not None:
            batch.variance[winners] = model.variance(points[winners])

    np.minimum(batch.distance, radius, out=batch.distance)
    norm = np.linalg.norm(grad_raw, axis=1)
    defined = hit & (norm >= GRADIENT_EPS)
    batch.gradient[defined] = -grad_raw[defined] / norm[defined, None]
    batch.defined = defined
    return batch
