"""Reactive obstacle avoidance on analytic and mapped fields."""

import numpy as np
import pytest

from gp_distance_mapper.geometry.features.transforms.transforms import PointCloud
from gp_distance_mapper.gp_field.features.local_gp.local_gp import FieldSample, SampleBatch
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore
from gp_distance_mapper.planning.features.reactive.reactive import (
    ReactiveParams,
    perpendicular,
    reactive_rollout,
    reactive_step,
    repulsion_weight,
)


class BallField:
    """Exact distance to a ball; `center` may be moved between queries."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = radius

    def query_batch(self, points):
        offset = np.asarray(points, dtype=np.float64) - self.center
        norm = np.linalg.norm(offset, axis=1)
        return SampleBatch(
            distance=np.maximum(norm - self.radius, 0.0),
            gradient=offset / norm[:, None],
            occupancy=np.zeros(len(norm)),
            defined=np.ones(len(norm), dtype=bool),
        )


# Just off the straight start-goal line: exactly on it the repulsion is antiparallel to the goal
# direction, the blend stays along the line and the rollout oscillates in front of the obstacle.
OBSTACLE = (0.5, 0.02, 0.0)


def _sample(distance, gradient=(1.0, 0.0, 0.0), defined=True):
    return FieldSample(distance, np.asarray(gradient, dtype=np.float64), 0.0, gradient_defined=defined)


@pytest.fixture
def params():
    return ReactiveParams(d_safe=0.3, d_min=0.1, step_size=0.05)


class TestReactiveParams:

    def test_from_dict_defaults(self):
        assert ReactiveParams.from_dict({"d_safe": 0.5}) == ReactiveParams(d_safe=0.5)

    @pytest.mark.parametrize("kwargs", [{"d_min": 0.3, "d_safe": 0.3}, {"d_min": 0.0}, {"step_size": 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ReactiveParams(**kwargs)


class TestReactiveStep:

    def test_weight(self, params):
        assert repulsion_weight(0.5, params) == 0.0
        assert repulsion_weight(0.05, params) == 1.0
        assert repulsion_weight(0.2, params) == pytest.approx(0.5)

    def test_far_from_obstacles_heads_to_goal(self, params):
        step = reactive_step([0, 0, 0], [2, 0, 0], _sample(0.3, (0, 1, 0)), params)
        np.testing.assert_allclose(step, [1.0, 0.0, 0.0])

    def test_inside_d_min_follows_gradient(self, params):
        step = reactive_step([0, 0, 0], [2, 0, 0], _sample(0.1, (0, 1, 0)), params)
        np.testing.assert_allclose(step, [0.0, 1.0, 0.0])

    def test_even_blend(self, params):
        step = reactive_step([0, 0, 0], [2, 0, 0], _sample(0.2, (0, 1, 0)), params)
        np.testing.assert_allclose(step, [np.sqrt(0.5), np.sqrt(0.5), 0.0])
        assert np.linalg.norm(step) == pytest.approx(1.0)

    def test_at_goal_returns_zero(self, params):
        step = reactive_step([1, 2, 3], [1, 2, 3], _sample(0.05, (0, 1, 0)), params)
        np.testing.assert_array_equal(step, np.zeros(3))

    def test_cancelled_blend_turns_about_z(self, params):
        step = reactive_step([0, 0, 0], [2, 0, 0], _sample(0.2, (-1, 0, 0)), params)
        np.testing.assert_allclose(step, [0.0, 1.0, 0.0], atol=1e-12)

    def test_cancelled_blend_keeps_vertical_component(self, params):
        gradient = -np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)
        step = reactive_step([0, 0, 0], [1, 0, 1], _sample(0.2, gradient), params)
        np.testing.assert_allclose(step, [0.0, np.sqrt(0.5), np.sqrt(0.5)], atol=1e-12)

    def test_cancelled_blend_along_z_turns_about_x(self, params):
        step = reactive_step([0, 0, 0], [0, 0, 2], _sample(0.2, (0, 0, -1)), params)
        np.testing.assert_allclose(step, [0.0, -1.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("distance, expected", [(0.25, [1.0, 0.0, 0.0]), (0.15, [-1.0, 0.0, 0.0])])
    def test_opposed_vectors_blend_without_tie_break(self, params, distance, expected):
        step = reactive_step([0, 0, 0], [2, 0, 0], _sample(distance, (-1, 0, 0)), params)
        np.testing.assert_allclose(step, expected, atol=1e-12)

    def test_output_is_unit_or_zero(self, params, rng):
        for _ in range(500):
            x_s, x_g = rng.uniform(-1.0, 1.0, (2, 3))
            gradient = rng.normal(size=3)
            gradient /= np.linalg.norm(gradient)
            if rng.uniform() < 0.2:
                gradient = -(x_g - x_s) / np.linalg.norm(x_g - x_s)
            step = reactive_step(x_s, x_g, _sample(rng.uniform(0.0, 0.4), gradient), params)
            assert np.linalg.norm(step) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(reactive_step([0, 0, 0], [0, 0, 0], _sample(0.2), params), np.zeros(3))

    def test_undefined_gradient_means_no_repulsion(self, params):
        step = reactive_step([0, 0, 0], [0, 0, 3], _sample(0.05, (0, 0, 0), defined=False), params)
        np.testing.assert_allclose(step, [0.0, 0.0, 1.0])

    def test_perpendicular(self):
        np.testing.assert_allclose(perpendicular(np.array([1.0, 0.0, 0.0])), [0.0, 1.0, 0.0])
        np.testing.assert_allclose(perpendicular(np.array([0.6, 0.0, 0.8])), [0.0, 0.6, 0.8])
        np.testing.assert_allclose(perpendicular(np.array([0.0, 0.0, 1.0])), [0.0, -1.0, 0.0])


class TestReactiveRollout:

    def test_empty_map_goes_straight(self, kernel, params):
        result = reactive_rollout([0, 0, 0], [1, 0, 0], OctreeStore(kernel, 0.01), params)
        assert result.reached
        assert result.steps == 20
        np.testing.assert_allclose(result.path[:, 1:], 0.0)
        np.testing.assert_allclose(result.path[-1], [1.0, 0.0, 0.0], atol=1e-3)

    def test_avoids_ball(self, params):
        field = BallField(OBSTACLE, 0.05)
        result = reactive_rollout([0, 0, 0], [1, 0, 0], field, params)
        assert result.reached
        assert np.abs(result.path[:, 1]).max() > 0.05
        assert result.min_clearance >= params.d_min
        clearance = np.linalg.norm(result.path - field.center, axis=1) - field.radius
        assert clearance.min() >= params.d_min - 1e-9

    def test_avoids_mapped_point(self, kernel, params):
        store = OctreeStore(kernel, 0.01)
        store.import_points(PointCloud([OBSTACLE]))
        result = reactive_rollout([0, 0, 0], [1, 0, 0], store, params)
        assert np.abs(result.path[:, 1]).max() > 0.05
        assert result.reached
        assert np.linalg.norm(result.path - OBSTACLE, axis=1).min() >= params.d_min - 1e-3

    def test_step_budget(self, params):
        result = reactive_rollout([0, 0, 0], [10, 0, 0], BallField([50, 0, 0], 0.1), params, max_steps=5)
        assert not result.reached
        assert result.steps == 5
        assert len(result.path) == 6

    def test_field_updates_between_steps(self, params):
        field = BallField([0.0, 0.0, 50.0], 0.05)
        calls = []

        def obstacle_appears(step):
            calls.append(step)
            if step == 5:
                field.center = np.array(OBSTACLE)

        result = reactive_rollout([0, 0, 0], [1, 0, 0], field, params, before_step=obstacle_appears)
        assert calls[:6] == [0, 1, 2, 3, 4, 5]
        np.testing.assert_allclose(result.path[:6, 1], 0.0)
        assert np.abs(result.path[6:, 1]).max() > 0.0
        assert result.min_clearance < 0.3


class TestCrossingObstacle:

    def test_seeded_crossings(self, params):
        successes = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x_cross = rng.uniform(0.3, 0.7)
            y_start = -rng.uniform(0.4, 1.0)
            speed = rng.uniform(0.005, 0.02)
            field = BallField([x_cross, y_start, 0.0], 0.05)

            def move(step, field=field, x=x_cross, y=y_start, v=speed):
                field.center = np.array([x, y + v * step, 0.0])

            result = reactive_rollout([0, 0, 0], [1, 0, 0], field, params, max_steps=1000, before_step=move)
            successes += result.reached and result.min_clearance >= params.d_min
        assert successes >= 95
