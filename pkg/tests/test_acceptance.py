"""Full-scene runs on simulated scenes, from mapping accuracy to reactive crossings on a mapped field."""

import time

import numpy as np
import pytest

from gp_distance_mapper.geometry.features.transforms.transforms import CameraIntrinsics, look_at
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.mapping.features.fusion.fusion import FusionParams, integrate_frame
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore, StoreConfig
from gp_distance_mapper.planning.features.reactive.reactive import ReactiveParams, reactive_rollout
from gp_distance_mapper.simulation.features.renderer.renderer import render_frame
from gp_distance_mapper.simulation.features.scene.scene import (
    PLANE,
    SPHERE,
    MotionTrack,
    Primitive,
    Scene,
    ball_on_table_scene,
    ground_truth_batch,
    room_scene,
)
from gp_distance_mapper.simulation.orchestrator import bench, query_set, run_pipeline

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ball_run():
    return run_pipeline(ball_on_table_scene(), resolution=0.01, seed=0)


def test_ball_on_table_accuracy(ball_run):
    assert ball_run.report.rmse <= 0.039
    assert ball_run.report.surface_rmse <= 0.039
    assert ball_run.report.mean_cosine > 0.8


@pytest.mark.parametrize("seed", range(10))
def test_vacated_ball_volume_cleared_in_one_frame(seed):
    scene = ball_on_table_scene(depth_noise=0.0)
    ball = scene.primitives[1]
    params = FusionParams(training_resolution=0.01)
    store = OctreeStore(scene.kernel, 0.01, StoreConfig.from_dict(scene.store))

    # the ball rolls away from the camera axis, so its new position never hides the old one
    t0 = np.random.default_rng(seed).uniform(2.5, 3.5)
    t1 = t0 + 2 * ball.radius / 0.2
    integrate_frame(store, render_frame(scene, t0, index=0), params)
    integrate_frame(store, render_frame(scene, t1, index=1), params)

    points = store.export_points().points
    old_centre = ball.motion.pose_at(t0).translation
    in_old_volume = np.linalg.norm(points - old_centre, axis=1) <= ball.radius + params.eta
    truth, _, _ = ground_truth_batch(scene, t1, points)
    assert np.count_nonzero(in_old_volume & (truth > params.eta)) == 0


def test_resolution_sweep_on_room():
    rows = bench(room_scene(), [0.05, 0.10, 0.15, 0.20, 0.30], query_count=1000)
    gp = np.array([r["gp_rmse"] for r in rows])
    baseline = np.array([r["baseline_rmse"] for r in rows])
    assert gp.max() < 2.0 * gp.min()
    assert baseline[-1] >= 2.0 * baseline[0]
    assert gp[-1] < baseline[-1]


def test_latency(ball_run):
    assert ball_run.report.update_ms < 150.0
    store = ball_run.store
    points = query_set(ball_on_table_scene(), 5.0, store.query_radius, np.random.default_rng(5), count=3190)
    store.query_batch(points)
    start = time.perf_counter()
    store.query_batch(points)
    assert (time.perf_counter() - start) * 1e3 < 50.0


STEP_TIME = 0.1


def _crossing_scene(x_cross, y_start, speed):
    """A 0.1 m ball crossing the x axis at x_cross, `speed` m per planner step, over a floor."""
    floor = Primitive(PLANE, MotionTrack([0.0], [(0.0, 0.0, -0.5)]), name="floor")
    ball = Primitive(
        SPHERE,
        MotionTrack([0.0, 1000 * STEP_TIME], [(x_cross, y_start, 0.0), (x_cross, y_start + 1000 * speed, 0.0)]),
        radius=0.1,
        name="ball",
    )
    return Scene(
        primitives=[floor, ball],
        camera=MotionTrack.fixed(look_at((0.5, -0.3, 1.5), (0.5, 0.0, 0.0))),
        intrinsics=CameraIntrinsics(np.radians(90.0), np.radians(75.0), 0.1, 4.0),
        width=64,
        height=48,
        name="crossing",
        kernel=KernelParams(lengthscale=0.1),
    )


def test_reactive_crossings_on_mapped_field():
    params = ReactiveParams(d_safe=0.3, d_min=0.1, step_size=0.05)
    fusion = FusionParams(training_resolution=0.02)
    successes = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        scene = _crossing_scene(rng.uniform(0.3, 0.7), -rng.uniform(0.4, 1.0), rng.uniform(0.005, 0.02))
        store = OctreeStore(scene.kernel, 0.02)

        def sense(step, scene=scene, store=store):
            integrate_frame(store, render_frame(scene, step * STEP_TIME, index=step), fusion)

        result = reactive_rollout([0, 0, 0], [1, 0, 0], store, params, max_steps=1000, before_step=sense)
        # each position is scored against the ball where it stood when the position was reached
        times = np.arange(len(result.path)) * STEP_TIME
        contact = any(ground_truth_batch(scene, t, p[None])[2][0] for t, p in zip(times, result.path))
        successes += result.reached and result.min_clearance >= params.d_min and not contact
    assert successes >= 95
