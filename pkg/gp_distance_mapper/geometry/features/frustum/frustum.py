"""
gp_distance_mapper/geometry/features/frustum/frustum.py

Frustum membership tests and pinhole pixel binning.

Membership: a world point is inside the frustum when, expressed in the camera frame, its depth
z satisfies near < z <= far and both |atan2(x, z)| <= hfov/2 and |atan2(y, z)| <= vfov/2.
The near plane is exclusive, the far plane and the angular bounds are inclusive.
"""

from typing import Tuple

import numpy as np

from gp_distance_mapper.geometry.features.transforms.transforms import (
    CameraIntrinsics,
    Point3,
    Pose,
)


def to_camera(points_world: np.ndarray, pose: Pose) -> np.ndarray:
    """Express (N, 3) world points in the camera frame of `pose`."""
    return (np.asarray(points_world, dtype=np.float64).reshape(-1, 3) - pose.translation) @ pose.rotation


def in_frustum_mask(points_world: np.ndarray, pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorised frustum membership for an (N, 3) array of world points."""
    cam = to_camera(points_world, pose)
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    depth_ok = (z > intr.near) & (z <= intr.far)
    with np.errstate(invalid="ignore"):
        h_ok = np.abs(np.arctan2(x, z)) <= intr.horizontal_fov / 2.0
        v_ok = np.abs(np.arctan2(y, z)) <= intr.vertical_fov / 2.0
    return depth_ok & h_ok & v_ok


def in_frustum(point_world: Point3, pose: Pose, intr: CameraIntrinsics) -> bool:
    return bool(in_frustum_mask(np.asarray(point_world).reshape(1, 3), pose, intr)[0])


def pixel_bins(points_cam: np.ndarray, intr: CameraIntrinsics, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pinhole pixel index of camera-frame points on a W x H grid.

    The grid is the one the simulator casts rays through: pixel (u, v) looks along
    x/z = tan(hfov/2) * (2 (u + 0.5) / W - 1), y/z = tan(vfov/2) * (2 (v + 0.5) / H - 1).

    Returns:
        valid: boolean mask of points in front of the camera that fall on the grid.
        flat:  flat pixel index v * W + u (meaningful where valid).
    """
    width, height = shape
    points_cam = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = points_cam[:, 2]
    front = z > 0.0
    safe_z = np.where(front, z, 1.0)
    u = np.floor((points_cam[:, 0] / safe_z / intr.tan_half_h + 1.0) * 0.5 * width).astype(np.int64)
    v = np.floor((points_cam[:, 1] / safe_z / intr.tan_half_v + 1.0) * 0.5 * height).astype(np.int64)
    valid = front & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    return valid, v * width + u
