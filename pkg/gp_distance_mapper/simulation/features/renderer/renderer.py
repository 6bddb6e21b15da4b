"""
gp_distance_mapper/simulation/features/renderer/renderer.py

Analytic depth-camera simulator: one ray per pixel of a W x H pinhole grid is intersected with
every primitive at its pose for time t; the nearest hit within (near, far] becomes a return in
the camera frame, optionally perturbed by Gaussian depth noise.

Functions:
  - pixel_rays(intr, width, height) -> (H*W, 3) camera-frame directions with unit z
  - cast_rays(scene, t, directions_cam) -> (depth, primitive index)
  - render_frame(scene, t, rng) -> SensorFrame
  - render_sequence(scene, rng) -> list of SensorFrame
  - sample_free_space(scene, t, count, rng) -> (count, 3) query points
"""

import logging
from typing import List, Optional, Tuple

import numpy as np

from gp_distance_mapper.geometry.features.transforms.transforms import CameraIntrinsics, PointCloud, SensorFrame
from gp_distance_mapper.simulation.features.scene.scene import Scene, ground_truth_batch

logger = logging.getLogger(__name__)


def pixel_rays(intr: CameraIntrinsics, width: int, height: int) -> np.ndarray:
    """Row-major ray directions (x/z, y/z, 1) through pixel centres."""
    u = intr.tan_half_h * (2.0 * (np.arange(width) + 0.5) / width - 1.0)
    v = intr.tan_half_v * (2.0 * (np.arange(height) + 0.5) / height - 1.0)
    uu, vv = np.meshgrid(u, v)
    return np.column_stack([uu.ravel(), vv.ravel(), np.ones(width * height)])


def cast_rays(scene: Scene, t: float, directions_cam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Camera-frame depth (z) of the nearest hit along each ray with unit z component, and the
    index of the primitive hit (-1 and inf where nothing is hit).
    """
    pose = scene.camera_pose(t)
    directions_world = np.asarray(directions_cam, dtype=np.float64).reshape(-1, 3) @ pose.rotation.T
    depth = np.full(len(directions_world), np.inf)
    index = np.full(len(directions_world), -1, dtype=np.int64)
    for i, primitive in enumerate(scene.primitives):
        s = primitive.intersect(t, pose.translation, directions_world)
        nearer = s < depth
        depth[nearer] = s[nearer]
        index[nearer] = i
    return depth, index


def render_frame(
    scene: Scene,
    t: float,
    rng: Optional[np.random.Generator] = None,
    depth_noise: Optional[float] = None,
    index: int = 0,
) -> SensorFrame:
    """
    Render the returns of the scene camera at time t.

    Args:
        rng:         Generator for depth noise; required when the noise is non-zero.
        depth_noise: Standard deviation of additive depth noise; defaults to the scene's.
    """
    noise = scene.depth_noise if depth_noise is None else depth_noise
    rays = pixel_rays(scene.intrinsics, scene.width, scene.height)
    depth, hit = cast_rays(scene, t, rays)
    valid = (depth > scene.intrinsics.near) & (depth <= scene.intrinsics.far)
    depth, hit, rays = depth[valid], hit[valid], rays[valid]
    if noise > 0.0:
        if rng is None:
            raise ValueError("render_frame needs an rng when depth noise is enabled")
        depth = depth + rng.normal(0.0, noise, size=len(depth))
    points = rays * depth[:, None]
    palette = np.array([p.color for p in scene.primitives], dtype=np.uint8).reshape(-1, 3)
    colors = palette[hit] if len(hit) else np.zeros((0, 3), dtype=np.uint8)
    return SensorFrame(
        cloud=PointCloud(points, colors),
        pose=scene.camera_pose(t),
        intrinsics=scene.intrinsics,
        timestamp=float(t),
        index=index,
    )


def render_sequence(scene: Scene, rng: Optional[np.random.Generator] = None, depth_noise: Optional[float] = None) -> List[SensorFrame]:
    return [render_frame(scene, t, rng, depth_noise, index=i) for i, t in enumerate(scene.frame_times())]


def sample_free_space(
    scene: Scene,
    t: float,
    count: int,
    rng: np.random.Generator,
    distance_range: Tuple[float, float] = (0.02, 0.5),
    max_rounds: int = 50,
) -> np.ndarray:
    """
    Query points uniform by volume in the camera-visible free space. Pixel rays are uniform on
    the image plane and depth follows the frustum cross-section, so its cube is uniform in
    [near^3, far^3]. Points are kept when in front of the first hit and at a true distance
    within range.
    """
    intr = scene.intrinsics
    pose = scene.camera_pose(t)
    kept: List[np.ndarray] = []
    total = 0
    for _ in range(max_rounds):
        batch = max(4 * (count - total), 64)
        u = rng.uniform(-1.0, 1.0, batch) * intr.tan_half_h
        v = rng.uniform(-1.0, 1.0, batch) * intr.tan_half_v
        rays = np.column_stack([u, v, np.ones(batch)])
        depth = np.cbrt(rng.uniform(intr.near**3, intr.far**3, batch))
        hit_depth, _ = cast_rays(scene, t, rays)
        world = (rays * depth[:, None]) @ pose.rotation.T + pose.translation
        distance, _, inside = ground_truth_batch(scene, t, world)
        ok = (depth < hit_depth) & ~inside & (distance >= distance_range[0]) & (distance <= distance_range[1])
        kept.append(world[ok])
        total += int(np.count_nonzero(ok))
        if total >= count:
            break
    points = np.vstack(kept)[:count] if kept else np.zeros((0, 3))
    if len(points) < count:
        logger.warning(f"Free-space sampler found only {len(points)} of {count} query points")
    return points
