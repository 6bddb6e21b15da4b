"""
gp_distance_mapper/planning/features/reactive/reactive.py

Reactive avoidance against a live distance field: the motion direction blends the repulsive
field gradient with the attractive unit vector towards the goal,

    v_res = normalize(w(d) * v_rep + (1 - w(d)) * v_att),
    w(d)  = clamp((d_safe - d) / (d_safe - d_min), 0, 1).

Functions:
  - repulsion_weight(d, params) -> w
  - reactive_step(x_s, x_g, sample, params) -> unit vector (zero at the goal)
  - reactive_rollout(start, goal, field, params, max_steps) -> RolloutResult
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from gp_distance_mapper.geometry.features.transforms.transforms import Point3
from gp_distance_mapper.gp_field.features.local_gp.local_gp import FieldSample, SampleBatch

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
PARALLEL_TOL = 1e-9


class QueryableField(Protocol):
    """Anything answering batched distance/gradient queries (store, frustum field, local model)."""

    def query_batch(self, points: np.ndarray) -> SampleBatch:
        ...


@dataclass(frozen=True)
class ReactiveParams:
    d_safe: float = 0.3
    d_min: float = 0.1
    step_size: float = 0.05
    goal_tolerance: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.d_min < self.d_safe:
            raise ValueError(f"Require 0 < d_min < d_safe, got d_min={self.d_min}, d_safe={self.d_safe}")
        if not self.step_size > 0.0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.goal_tolerance < 0.0:
            raise ValueError(f"goal_tolerance must be >= 0, got {self.goal_tolerance}")

    @classmethod
    def from_dict(cls, data: dict) -> "ReactiveParams":
        defaults = cls()
        return cls(
            d_safe=float(data.get("d_safe", defaults.d_safe)),
            d_min=float(data.get("d_min", defaults.d_min)),
            step_size=float(data.get("step_size", defaults.step_size)),
            goal_tolerance=float(data.get("goal_tolerance", defaults.goal_tolerance)),
        )


@dataclass
class RolloutResult:
    path: np.ndarray
    reached: bool
    min_clearance: float
    steps: int


def repulsion_weight(distance: float, params: ReactiveParams) -> float:
    return float(np.clip((params.d_safe - distance) / (params.d_safe - params.d_min), 0.0, 1.0))


def perpendicular(v: np.ndarray) -> np.ndarray:
    """v rotated by +90 degrees about world z, or about world x when v is parallel to z."""
    if np.hypot(v[0], v[1]) < PARALLEL_TOL:
        return np.array([v[0], -v[2], v[1]])
    return np.array([-v[1], v[0], v[2]])


def reactive_step(x_s: Point3, x_g: Point3, sample: FieldSample, params: ReactiveParams) -> np.ndarray:
    """
    Blended unit direction at x_s. Returns the zero vector once x_s is within goal_tolerance
    of x_g. An undefined field gradient contributes no repulsion. A blend that cancels out
    (w = 0.5 against an exactly opposed gradient) turns v_att by 90 degrees.
    """
    to_goal = np.asarray(x_g, dtype=np.float64) - np.asarray(x_s, dtype=np.float64)
    remaining = np.linalg.norm(to_goal)
    if remaining <= params.goal_tolerance:
        return np.zeros(3)
    v_att = to_goal / remaining

    w = repulsion_weight(sample.distance, params)
    v_rep = np.asarray(sample.gradient, dtype=np.float64)
    rep_norm = np.linalg.norm(v_rep)
    if w == 0.0 or not sample.gradient_defined or rep_norm < DEGENERATE_NORM:
        return v_att
    v_rep = v_rep / rep_norm
    if w == 1.0:
        return v_rep

    blend = w * v_rep + (1.0 - w) * v_att
    norm = np.linalg.norm(blend)
    if norm < DEGENERATE_NORM:
        return perpendicular(v_att)
    return blend / norm


def reactive_rollout(
    start: Point3,
    goal: Point3,
    field: QueryableField,
    params: ReactiveParams,
    max_steps: int = 500,
    before_step: Optional[Callable[[int], None]] = None,
) -> RolloutResult:
    """
    Follow reactive_step from start towards goal, querying the field at every visited position.

    Args:
        field:       Live field; may change between steps (e.g. frames integrated by before_step).
        max_steps:   Step budget; exhausting it leaves reached=False.
        before_step: Called with the step index before each field query.

    Returns:
        RolloutResult with the visited positions, whether the goal was reached, and the minimum
        queried distance over the rollout.
    """
    x = np.array(start, dtype=np.float64).reshape(3)
    goal = np.asarray(goal, dtype=np.float64).reshape(3)
    path = [x.copy()]
    min_clearance = np.inf
    reached = False
    steps = 0

    for k in range(max_steps):
        if before_step is not None:
            before_step(k)
        sample = field.query_batch(x.reshape(1, 3))[0]
        min_clearance = min(min_clearance, sample.distance)
        direction = reactive_step(x, goal, sample, params)
        if not direction.any():
            reached = True
            break
        step = min(params.step_size, np.linalg.norm(goal - x))
        x = x + step * direction
        path.append(x.copy())
        steps += 1
        if np.linalg.norm(goal - x) <= params.goal_tolerance:
            reached = True
            break

    if reached:
        min_clearance = min(min_clearance, field.query_batch(x.reshape(1, 3))[0].distance)
    else:
        logger.warning(f"Reactive rollout stopped after {steps} steps, {np.linalg.norm(goal - x):.3f} m from goal")
    return RolloutResult(np.array(path), reached, float(min_clearance), steps)
