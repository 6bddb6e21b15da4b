"""Accuracy metrics against analytic ground truth."""

import numpy as np
import pytest

from gp_distance_mapper.geometry.features.transforms.transforms import CameraIntrinsics, PointCloud, Pose
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams
from gp_distance_mapper.mapping.features.octree_store.octree_store import OctreeStore, StoreConfig
from gp_distance_mapper.simulation.features.metrics.metrics import (
    MetricsError,
    cosine_similarity,
    evaluate,
    rmse,
    surface_rmse,
)
from gp_distance_mapper.simulation.features.scene.scene import PLANE, MotionTrack, Primitive, Scene

# inside the leaf [0, 1.25]^3 of a 20 m world with 1.25 m leaves
CENTRE = np.array([0.625, 0.625, 0.5])


@pytest.fixture
def plane_scene():
    return Scene(
        primitives=[Primitive(PLANE, MotionTrack([0.0], [CENTRE]))],
        camera=MotionTrack.fixed(Pose.identity()),
        intrinsics=CameraIntrinsics(np.pi / 2, np.pi / 2, 0.1, 5.0),
    )


@pytest.fixture
def plane_store():
    axis = np.arange(-0.3, 0.3 + 1e-9, 0.02)
    xx, yy = np.meshgrid(axis, axis)
    points = CENTRE + np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    store = OctreeStore(KernelParams(lengthscale=0.05, noise_variance=1e-4), 0.01, StoreConfig(leaf_size=1.25))
    store.import_points(PointCloud(points))
    return store


class TestPrimitives:

    def test_rmse(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert rmse([0.0, 0.0], [3.0, 4.0]) == pytest.approx(np.sqrt(12.5))
        with pytest.raises(MetricsError):
            rmse([], [])

    def test_cosine(self):
        assert cosine_similarity([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]) == pytest.approx(1.0)
        assert cosine_similarity([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]) == pytest.approx(0.0)
        rows = cosine_similarity(np.array([[1.0, 0, 0], [0, 1.0, 0]]), np.array([[-1.0, 0, 0], [0, 1.0, 1.0]]))
        np.testing.assert_allclose(rows, [-1.0, np.sqrt(0.5)])


class TestEvaluate:

    def test_plane_patch(self, plane_store, plane_scene, rng):
        offsets = rng.uniform([-0.15, -0.15, 0.03], [0.15, 0.15, 0.1], size=(200, 3))
        report = evaluate(plane_store, plane_scene, 0.0, CENTRE + offsets, update_ms=12.5)
        assert report.rmse < 0.005
        assert report.mean_cosine > 0.99
        assert report.surface_rmse == pytest.approx(0.0, abs=1e-12)
        assert report.num_queries == 200
        assert report.store_size == len(plane_store)
        assert report.update_ms == 12.5
        assert report.query_us > 0.0
        assert set(report.as_dict()) >= {"rmse", "mean_cosine", "update_ms", "query_us", "store_size"}

    def test_without_surface(self, plane_store, plane_scene):
        report = evaluate(plane_store, plane_scene, 0.0, [CENTRE + [0, 0, 0.05]], with_surface=False)
        assert np.isnan(report.surface_rmse)

    def test_empty_query_set(self, plane_store, plane_scene):
        with pytest.raises(MetricsError):
            evaluate(plane_store, plane_scene, 0.0, np.zeros((0, 3)))

    def test_surface_rmse(self, plane_scene):
        store = OctreeStore(KernelParams(), 0.01)
        assert np.isnan(surface_rmse(store, plane_scene, 0.0))
        store.import_points(PointCloud([CENTRE + [0, 0, 0.03], CENTRE - [0, 0, 0.04]]))
        assert surface_rmse(store, plane_scene, 0.0) == pytest.approx(np.sqrt((0.03 ** 2 + 0.04 ** 2) / 2))
