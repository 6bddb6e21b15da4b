"""
gp_distance_mapper/planning/features/chomp/chomp.py

Covariant gradient trajectory optimisation against a distance field.

The body is a set of spheres attached to every waypoint (offsets expressed in the path frame
whose x axis is the local tangent). The objective is

    F(W) = lambda * sum_k |w_{k+1} - 2 w_k + w_{k-1}|^2
         + obstacle_weight * sum_k sum_s c(d(center_{k,s}) - r_s)

with the hinge cost c(d) = 0 for d >= eps, (eps - d)^2 / (2 eps) for 0 <= d < eps and
eps / 2 - d for d < 0. The obstacle gradient uses the field's analytic unit gradient and moves each
sphere centre rigidly with its waypoint: the turn of the path frame with the tangent is left out,
which is exact for spheres on the waypoint and close for a short chain along the path. Updates
are preconditioned by the inverse of the second-difference metric and accepted only when the
cost does not increase (the learning rate is halved otherwise). Endpoints never move.

Functions:
  - hinge_cost(d, eps) -> (cost, dcost/dd)
  - chomp_optimize(init, body, field, params) -> (Trajectory, cost history)
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from gp_distance_mapper.planning.features.reactive.reactive import QueryableField

logger = logging.getLogger(__name__)

MIN_LEARNING_RATE = 1e-8


class PlanningError(RuntimeError):
    """Raised on invalid planning inputs or a non-finite objective."""
    pass


@dataclass
class Trajectory:
    """Ordered waypoints with fixed endpoints."""

    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.array(self.waypoints, dtype=np.float64).reshape(-1, 3)
        if len(self.waypoints) < 2:
            raise PlanningError(f"A trajectory needs at least 2 waypoints, got {len(self.waypoints)}")
        if not np.all(np.isfinite(self.waypoints)):
            raise PlanningError("Trajectory waypoints must be finite")

    def __len__(self) -> int:
        return len(self.waypoints)

    @classmethod
    def straight(cls, start, goal, count: int) -> "Trajectory":
        return cls(np.linspace(np.asarray(start, dtype=np.float64), np.asarray(goal, dtype=np.float64), count))

    def tangents(self) -> np.ndarray:
        """Unit tangent per waypoint (central differences, one-sided at the ends)."""
        t = np.gradient(self.waypoints, axis=0)
        norm = np.linalg.norm(t, axis=1, keepdims=True)
        return np.where(norm > 1e-12, t / np.where(norm > 1e-12, norm, 1.0), np.array([1.0, 0.0, 0.0]))


@dataclass
class SphereBody:
    """Spheres carried by every waypoint: offsets (tangent, normal, binormal) and radii."""

    offsets: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        self.offsets = np.array(self.offsets, dtype=np.float64).reshape(-1, 3)
        self.radii = np.array(self.radii, dtype=np.float64).reshape(-1)
        if len(self.offsets) != len(self.radii) or len(self.radii) == 0:
            raise PlanningError("SphereBody needs one offset per radius and at least one sphere")
        if not np.all(self.radii > 0.0):
            raise PlanningError("Sphere radii must be positive")

    def __len__(self) -> int:
        return len(self.radii)

    @classmethod
    def chain(cls, count: int = 3, radius: float = 0.05, spacing: float = None) -> "SphereBody":
        """`count` equal spheres centred on the waypoint, spaced along the tangent."""
        spacing = radius if spacing is None else spacing
        along = (np.arange(count) - (count - 1) / 2.0) * spacing
        offsets = np.column_stack([along, np.zeros(count), np.zeros(count)])
        return cls(offsets, np.full(count, radius))

    @classmethod
    def from_dict(cls, spheres: Sequence[dict]) -> "SphereBody":
        return cls([s["offset"] for s in spheres], [s["radius"] for s in spheres])

    def centers(self, trajectory: Trajectory) -> np.ndarray:
        """(N, S, 3) sphere centres along the trajectory."""
        t = trajectory.tangents()
        up = np.tile(np.array([0.0, 0.0, 1.0]), (len(t), 1))
        parallel = np.abs(t @ np.array([0.0, 0.0, 1.0])) > 1.0 - 1e-9
        up[parallel] = np.array([0.0, 1.0, 0.0])
        n = np.cross(up, t)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        b = np.cross(t, n)
        frame = np.stack([t, n, b], axis=2)
        return trajectory.waypoints[:, None, :] + np.einsum("kij,sj->ksi", frame, self.offsets)


@dataclass(frozen=True)
class ChompParams:
    epsilon: float = 0.1
    smoothness_weight: float = 1.0
    obstacle_weight: float = 1.0
    learning_rate: float = 0.05
    max_iterations: int = 200
    tolerance: float = 1e-6
    gradient_tolerance: float = 1e-9

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.smoothness_weight < 0.0:
            raise ValueError(f"smoothness_weight must be >= 0, got {self.smoothness_weight}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def from_dict(cls, data: dict) -> "ChompParams":
        defaults = cls()
        return cls(**{name: type(getattr(defaults, name))(data.get(name, getattr(defaults, name)))
                      for name in defaults.__dataclass_fields__})


def hinge_cost(distance: np.ndarray, epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    """Obstacle cost and its derivative with respect to the clearance."""
    d = np.asarray(distance, dtype=np.float64)
    cost = np.where(d >= epsilon, 0.0, np.where(d >= 0.0, (epsilon - d) ** 2 / (2.0 * epsilon), epsilon / 2.0 - d))
    slope = np.where(d >= epsilon, 0.0, np.where(d >= 0.0, -(epsilon - d) / epsilon, -1.0))
    return cost, slope


def second_difference(count: int) -> np.ndarray:
    """(count - 2, count) finite-difference operator w_{k+1} - 2 w_k + w_{k-1}."""
    D = np.zeros((max(count - 2, 0), count))
    for k in range(count - 2):
        D[k, k:k + 3] = (1.0, -2.0, 1.0)
    return D


class _Objective:
    """Cost, gradient (N, 3) and per-sphere clearance (N, S) of a waypoint array."""

    def __init__(self, body: SphereBody, field: QueryableField, params: ChompParams, count: int):
        self.body = body
        self.field = field
        self.params = params
        self.D = second_difference(count)

    def __call__(self, waypoints: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        acc = self.D @ waypoints
        smooth = self.params.smoothness_weight * float(np.sum(acc ** 2))
        grad = 2.0 * self.params.smoothness_weight * (self.D.T @ acc)

        clearance, samples = _clearance(Trajectory(waypoints), self.body, self.field)
        cost, slope = hinge_cost(clearance, self.params.epsilon)
        direction = np.where(samples.defined[:, None], samples.gradient, 0.0).reshape(len(waypoints), -1, 3)
        grad += self.params.obstacle_weight * np.einsum("ks,ksi->ki", slope, direction)
        return smooth + self.params.obstacle_weight * float(cost.sum()), grad, clearance


def _clearance(trajectory: Trajectory, body: SphereBody, field: QueryableField):
    samples = field.query_batch(body.centers(trajectory).reshape(-1, 3))
    return samples.distance.reshape(len(trajectory), -1) - body.radii, samples


def body_clearance(trajectory: Trajectory, body: SphereBody, field: QueryableField) -> np.ndarray:
    """(N, S) queried distance minus sphere radius."""
    return _clearance(trajectory, body, field)[0]


def _preconditioner(count: int) -> np.ndarray:
    """Inverse of the interior second-difference metric, scaled to a unit largest entry."""
    D = second_difference(count)[:, 1:-1]
    inverse = cho_solve(cho_factor(D.T @ D), np.eye(count - 2))
    return inverse / inverse.max()


def chomp_optimize(
    init: Trajectory,
    body: SphereBody,
    field: QueryableField,
    params: ChompParams,
) -> Tuple[Trajectory, List[float]]:
    """
    Optimise the interior waypoints of `init`.

    Returns:
        The optimised trajectory (endpoints bit-identical to init) and the cost of every
        accepted iterate, starting with the initial cost.

    Raises:
        PlanningError: If an endpoint sphere is within epsilon of an obstacle or the cost
                       becomes non-finite.
    """
    objective = _Objective(body, field, params, len(init))
    waypoints = init.waypoints.copy()

    cost, grad, clearance = objective(waypoints)
    if not np.isfinite(cost):
        raise PlanningError("Initial trajectory cost is not finite")
    end_distance = clearance[[0, -1]] + body.radii
    if np.any(end_distance <= params.epsilon):
        raise PlanningError(
            f"Trajectory endpoints are not collision-free (min endpoint distance {end_distance.min():.3f} m)"
        )
    history = [cost]
    if len(waypoints) < 3:
        return Trajectory(waypoints), history

    precondition = _preconditioner(len(waypoints))
    rate = params.learning_rate
    for iteration in range(params.max_iterations):
        interior = grad[1:-1]
        if np.abs(interior).max() <= params.gradient_tolerance:
            logger.debug(f"CHOMP converged (zero gradient) after {iteration} iterations")
            break
        step = precondition @ interior

        while True:
            candidate = waypoints.copy()
            candidate[1:-1] -= rate * step
            new_cost, new_grad, _ = objective(candidate)
            if not np.isfinite(new_cost):
                raise PlanningError(f"Non-finite cost at iteration {iteration}")
            if new_cost <= cost:
                break
            rate *= 0.5
            if rate < MIN_LEARNING_RATE:
                break
        if rate < MIN_LEARNING_RATE:
            logger.debug(f"CHOMP stopped: learning rate underflow at iteration {iteration}")
            break

        decrease = cost - new_cost
        waypoints, cost, grad = candidate, new_cost, new_grad
        history.append(cost)
        if decrease < params.tolerance:
            break

    logger.info(f"CHOMP finished: {len(history) - 1} accepted iterations, cost {history[0]:.4f} -> {cost:.4f}")
    return Trajectory(waypoints), history
