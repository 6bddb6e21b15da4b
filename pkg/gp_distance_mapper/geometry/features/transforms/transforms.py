"""
gp_distance_mapper/geometry/features/transforms/transforms.py

Core geometric value types shared by every area of the mapper, and the rigid-body transform
that projects a sensor cloud into the world frame.

Key types:
  - Pose:             camera-to-world rigid transform (p_world = R @ p_cam + t).
  - CameraIntrinsics: angular field of view and depth range of a depth camera.
  - PointCloud:       (N, 3) float64 points with optional (N, 3) uint8 colours.
  - SensorFrame:      one depth-camera observation (camera-frame cloud + pose + intrinsics).

Key functions:
  - transform_cloud(cloud, pose) -> PointCloud
  - sanitize_cloud(cloud) -> (PointCloud, dropped)
  - pose_from_quaternion(translation, quaternion) -> Pose
  - look_at(eye, target) -> Pose

Camera convention: +z is the optical axis, +x points right and +y points down.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

# A Point3 is a length-3 float array; clouds are (N, 3) arrays.
Point3 = np.ndarray

ORTHONORMAL_TOL = 1e-9


class GeometryError(ValueError):
    """Raised on invalid poses, intrinsics or resolutions."""
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform from the camera frame to the world frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))
        self.check()

    def check(self) -> None:
        """
        Raises:
            GeometryError: If R is not orthonormal with det +1, or t is not finite.
        """
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise GeometryError("Pose contains non-finite values.")
        residual = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if residual > ORTHONORMAL_TOL:
            raise GeometryError(f"Rotation is not orthonormal (max |R^T R - I| = {residual:.3e}).")
        if np.linalg.det(self.rotation) <= 0.0:
            raise GeometryError("Rotation has negative determinant (reflection).")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def quaternion(self) -> np.ndarray:
        """Rotation as (qx, qy, qz, qw)."""
        return Rotation.from_matrix(self.rotation).as_quat()


def pose_from_quaternion(translation: Sequence[float], quaternion: Sequence[float]) -> Pose:
    """
    Build a Pose from a translation and a unit quaternion in (qx, qy, qz, qw) order.
    """
    quat = np.asarray(quaternion, dtype=np.float64)
    norm = np.linalg.norm(quat)
    if not np.isfinite(norm) or norm == 0.0:
        raise GeometryError(f"Invalid quaternion {quaternion!r}.")
    matrix = Rotation.from_quat(quat / norm).as_matrix()
    # Re-orthonormalise so the 1e-9 check never trips on float round-off
    u, _, vt = np.linalg.svd(matrix)
    return Pose(u @ vt, translation)


def look_at(eye: Sequence[float], target: Sequence[float], up: Sequence[float] = (0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at `eye` whose optical axis points at `target` (image +y towards -up)."""
    eye = np.asarray(eye, dtype=np.float64)
    z_axis = np.asarray(target, dtype=np.float64) - eye
    if np.linalg.norm(z_axis) == 0.0:
        raise GeometryError("look_at: eye and target coincide.")
    z_axis /= np.linalg.norm(z_axis)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(z_axis, up)) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(z_axis, up)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return Pose(np.column_stack([x_axis, y_axis, z_axis]), eye)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Frustum geometry of a depth camera (angles in radians, depths in metres)."""

    horizontal_fov: float
    vertical_fov: float
    near: float
    far: float

    def __post_init__(self):
        if not (0.0 < self.horizontal_fov < np.pi and 0.0 < self.vertical_fov < np.pi):
            raise GeometryError(
                f"Field of view must lie in (0, pi): got {self.horizontal_fov}, {self.vertical_fov}."
            )
        if not (0.0 < self.near < self.far):
            raise GeometryError(f"Require 0 < near < far: got near={self.near}, far={self.far}.")

    @property
    def tan_half_h(self) -> float:
        return float(np.tan(self.horizontal_fov / 2.0))

    @property
    def tan_half_v(self) -> float:
        return float(np.tan(self.vertical_fov / 2.0))


@dataclass
class PointCloud:
    """Ordered points with optional per-point RGB colour."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise GeometryError(
                    f"Colour count {len(self.colors)} does not match point count {len(self.points)}."
                )

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def subset(self, selector) -> "PointCloud":
        colors = None if self.colors is None else self.colors[selector]
        return PointCloud(self.points[selector], colors)

    def color_array(self) -> np.ndarray:
        """Colours, defaulting to white where the cloud carries none."""
        if self.colors is None:
            return np.full((len(self.points), 3), 255, dtype=np.uint8)
        return self.colors


@dataclass
class SensorFrame:
    """One depth-camera observation; the cloud is expressed in the camera frame."""

    cloud: PointCloud
    pose: Pose
    intrinsics: CameraIntrinsics
    timestamp: float = 0.0
    index: int = 0
    dropped: int = field(default=0)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    """
    Apply p' = R p + t to every point, preserving order and colours.

    Raises:
        GeometryError: If the pose rotation is not orthonormal.
    """
    pose.check()
    moved = cloud.points @ pose.rotation.T + pose.translation
    return PointCloud(moved, cloud.colors)


def sanitize_cloud(cloud: PointCloud) -> Tuple[PointCloud, int]:
    """
    Drop non-finite points and zero/negative-depth returns from a camera-frame cloud.

    Returns:
        The filtered cloud and the number of dropped points.
    """
    keep = np.all(np.isfinite(cloud.points), axis=1)
    keep[keep] &= cloud.points[keep, 2] > 0.0
    dropped = int(len(cloud) - np.count_nonzero(keep))
    if dropped == 0:
        return cloud, 0
    return cloud.subset(keep), dropped
