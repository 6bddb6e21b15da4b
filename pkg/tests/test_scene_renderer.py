"""Analytic scenes, ground truth and the depth-camera simulator."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gp_distance_mapper.geometry.features.transforms.transforms import CameraIntrinsics, GeometryError, Pose
from gp_distance_mapper.simulation.features.renderer.renderer import (
    cast_rays,
    pixel_rays,
    render_frame,
    render_sequence,
    sample_free_space,
)
from gp_distance_mapper.simulation.features.scene.scene import (
    BOX,
    PLANE,
    SPHERE,
    MotionTrack,
    Primitive,
    Scene,
    ball_on_table_scene,
    ground_truth,
    ground_truth_batch,
    scene_from_dict,
)


def _at(position):
    return MotionTrack([0.0], [position])


def _scene(*primitives, size=11, far=5.0):
    return Scene(
        primitives=list(primitives),
        camera=MotionTrack.fixed(Pose.identity()),
        intrinsics=CameraIntrinsics(np.pi / 2, np.pi / 2, 0.1, far),
        width=size,
        height=size,
    )


class TestMotionTrack:

    def test_linear_position_and_clamping(self):
        track = MotionTrack([0.0, 2.0], [(0, 0, 0), (2, 0, 0)])
        np.testing.assert_allclose(track.pose_at(1.0).translation, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(track.pose_at(-1.0).translation, [0.0, 0.0, 0.0])
        np.testing.assert_allclose(track.pose_at(5.0).translation, [2.0, 0.0, 0.0])

    def test_slerp_orientation(self):
        quarter = Rotation.from_euler("z", 90.0, degrees=True).as_quat()
        track = MotionTrack([0.0, 1.0], [(0, 0, 0), (0, 0, 0)], [(0, 0, 0, 1), quarter])
        expected = Rotation.from_euler("z", 45.0, degrees=True).as_matrix()
        np.testing.assert_allclose(track.pose_at(0.5).rotation, expected, atol=1e-12)

    def test_invalid_keyframes(self):
        with pytest.raises(GeometryError):
            MotionTrack([1.0, 0.0], [(0, 0, 0), (1, 0, 0)])
        with pytest.raises(GeometryError):
            MotionTrack([0.0], [(0, 0, 0), (1, 0, 0)])


class TestGroundTruth:

    def test_plane_both_sides(self):
        scene = _scene(Primitive(PLANE, _at((0, 0, 1))))
        above = ground_truth(scene, 0.0, [0.3, 0.2, 1.4])
        assert above.distance == pytest.approx(0.4)
        np.testing.assert_allclose(above.gradient, [0, 0, 1])
        below = ground_truth(scene, 0.0, [0.3, 0.2, 0.5])
        np.testing.assert_allclose(below.gradient, [0, 0, -1])

    def test_sphere_outside_and_inside(self):
        scene = _scene(Primitive(SPHERE, _at((0, 0, 2)), radius=0.5))
        outside = ground_truth(scene, 0.0, [0, 0, 3])
        assert outside.distance == pytest.approx(0.5)
        np.testing.assert_allclose(outside.gradient, [0, 0, 1])
        inside = ground_truth(scene, 0.0, [0, 0.1, 2])
        assert inside.inside
        assert inside.distance == 0.0
        np.testing.assert_array_equal(inside.gradient, np.zeros(3))

    def test_box(self):
        scene = _scene(Primitive(BOX, _at((0, 0, 0)), half_extents=(0.5, 0.5, 0.5)))
        face = ground_truth(scene, 0.0, [1.0, 0.0, 0.0])
        assert face.distance == pytest.approx(0.5)
        np.testing.assert_allclose(face.gradient, [1, 0, 0])
        corner = ground_truth(scene, 0.0, [1.5, 1.5, 0.0])
        assert corner.distance == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(corner.gradient, [np.sqrt(0.5), np.sqrt(0.5), 0.0])

    def test_nearest_primitive_wins(self):
        scene = _scene(
            Primitive(PLANE, _at((0, 0, 0))),
            Primitive(SPHERE, _at((0, 0, 1)), radius=0.2),
        )
        truth = ground_truth(scene, 0.0, [0, 0, 0.7])
        assert truth.primitive == 1
        assert truth.distance == pytest.approx(0.1)
        np.testing.assert_allclose(truth.gradient, [0, 0, -1])

    def test_gradient_matches_finite_differences(self, rng):
        scene = _scene(
            Primitive(SPHERE, _at((0, 0, 2)), radius=0.3),
            Primitive(BOX, _at((1, 0, 2)), half_extents=(0.2, 0.3, 0.1)),
        )
        points = rng.uniform([-0.5, -0.5, 1.0], [1.5, 0.5, 3.0], size=(200, 3))
        distance, gradient, inside = ground_truth_batch(scene, 0.0, points)
        h = 1e-6
        for p, d, g, inner in zip(points, distance, gradient, inside):
            if inner or d < 1e-3:
                continue
            fd = np.array([
                (ground_truth(scene, 0.0, p + h * e).distance - ground_truth(scene, 0.0, p - h * e).distance) / (2 * h)
                for e in np.eye(3)
            ])
            if abs(np.linalg.norm(fd) - 1.0) > 1e-3:
                continue  # medial axis between the two primitives
            np.testing.assert_allclose(fd, g, atol=1e-4)

    def test_moving_primitive(self):
        scene = ball_on_table_scene()
        start = ground_truth(scene, 0.0, [-0.5, 0.0, 0.5])
        end = ground_truth(scene, 5.0, [-0.5, 0.0, 0.5])
        assert start.distance == pytest.approx(0.2)
        assert end.distance > start.distance


class TestRenderer:

    def test_pixel_rays(self, square_intrinsics):
        rays = pixel_rays(square_intrinsics, 11, 11)
        assert rays.shape == (121, 3)
        np.testing.assert_allclose(rays[60], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(rays[0, :2], [-10 / 11, -10 / 11])

    def test_plane_depth(self):
        frame = render_frame(_scene(Primitive(PLANE, _at((0, 0, 1)))), 0.0)
        assert len(frame.cloud) == 121
        np.testing.assert_allclose(frame.cloud.points[:, 2], 1.0)
        np.testing.assert_allclose(frame.cloud.points[60], [0.0, 0.0, 1.0], atol=1e-12)

    def test_sphere_behind_camera(self):
        frame = render_frame(_scene(Primitive(SPHERE, _at((0, 0, -2)), radius=0.5)), 0.0)
        assert len(frame.cloud) == 0

    def test_sphere_returns_lie_on_surface(self):
        frame = render_frame(_scene(Primitive(SPHERE, _at((0, 0, 2)), radius=0.5), size=31), 0.0)
        assert len(frame.cloud) > 0
        centre_depth = frame.cloud.points[np.argmin(np.linalg.norm(frame.cloud.points[:, :2], axis=1)), 2]
        assert centre_depth == pytest.approx(1.5)
        residual = np.linalg.norm(frame.cloud.points - [0, 0, 2], axis=1) - 0.5
        np.testing.assert_allclose(residual, 0.0, atol=1e-9)

    def test_occlusion_and_colour(self):
        scene = _scene(
            Primitive(PLANE, _at((0, 0, 3)), color=(1, 2, 3)),
            Primitive(SPHERE, _at((0, 0, 2)), radius=0.5, color=(9, 9, 9)),
        )
        depth, index = cast_rays(scene, 0.0, np.array([[0.0, 0.0, 1.0], [0.9, 0.9, 1.0]]))
        np.testing.assert_allclose(depth, [1.5, 3.0])
        assert index.tolist() == [1, 0]
        frame = render_frame(scene, 0.0)
        assert frame.cloud.colors[60].tolist() == [9, 9, 9]

    def test_beyond_far_dropped(self):
        assert len(render_frame(_scene(Primitive(PLANE, _at((0, 0, 6)))), 0.0).cloud) == 0

    def test_noise_needs_rng_and_is_seeded(self):
        scene = _scene(Primitive(PLANE, _at((0, 0, 1))))
        with pytest.raises(ValueError):
            render_frame(scene, 0.0, depth_noise=0.01)
        a = render_frame(scene, 0.0, np.random.default_rng(7), depth_noise=0.01)
        b = render_frame(scene, 0.0, np.random.default_rng(7), depth_noise=0.01)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        assert np.std(a.cloud.points[:, 2]) > 0.0

    def test_sequence(self):
        scene = _scene(Primitive(PLANE, _at((0, 0, 1))))
        scene.duration, scene.frame_rate = 1.0, 4.0
        frames = render_sequence(scene)
        assert [f.index for f in frames] == [0, 1, 2, 3, 4]
        np.testing.assert_allclose([f.timestamp for f in frames], [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_free_space_samples(self, rng):
        scene = _scene(
            Primitive(PLANE, _at((0, 0, 2))),
            Primitive(SPHERE, _at((0, 0, 1.5)), radius=0.3),
        )
        points = sample_free_space(scene, 0.0, 300, rng)
        assert points.shape == (300, 3)
        distance, _, inside = ground_truth_batch(scene, 0.0, points)
        assert not inside.any()
        assert distance.min() >= 0.02
        assert distance.max() <= 0.5
        assert points[:, 2].max() < 2.0

    def test_free_space_samples_are_uniform_by_volume(self, rng):
        scene = _scene(Primitive(PLANE, _at((0, 0, 3))))
        points = sample_free_space(scene, 0.0, 4000, rng, distance_range=(0.0, 10.0))
        near, wall = scene.intrinsics.near, 3.0
        mid = 0.5 * (near + wall)
        expected = (mid**3 - near**3) / (wall**3 - near**3)
        # depth-uniform sampling would put half the points in the near half
        assert np.mean(points[:, 2] < mid) == pytest.approx(expected, abs=0.03)
        assert np.median(points[:, 2]) > mid


class TestSceneFromDict:

    def test_builds_look_at_camera(self):
        scene = scene_from_dict({
            "primitives": [{"kind": "sphere", "radius": 0.5, "keyframes": [{"position": [0, 0, 0]}]}],
            "camera": {"keyframes": [{"position": [0, -2, 0], "target": [0, 0, 0]}], "width": 8, "height": 6},
            "duration": 1.0,
            "frame_rate": 2.0,
            "kernel": {"lengthscale": 0.1},
        })
        assert scene.shape == (8, 6)
        assert len(scene.frame_times()) == 3
        assert scene.kernel.lengthscale == 0.1
        frame = render_frame(scene, 0.0)
        assert len(frame.cloud) > 0
        np.testing.assert_allclose(scene.camera_pose(0.0).rotation[:, 2], [0, 1, 0], atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(GeometryError):
            Primitive("cone", _at((0, 0, 0)))
