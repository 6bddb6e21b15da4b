"""
gp_distance_mapper/simulation/features/scene/scene.py

Analytic scenes for the simulator: planes, spheres and boxes moving along keyframed rigid
motions, observed by a keyframed depth camera.

Each primitive answers two questions in closed form at any time t:
  - where does a ray first hit it (renderer), and
  - how far is a point from its surface, and in which direction (ground truth).

Key types:
  - MotionTrack:  piecewise-linear positions with slerp-interpolated orientations.
  - Primitive:    plane (local normal +z), sphere (radius) or box (half extents).
  - Scene:        primitives + camera track + intrinsics + frame rate + per-run overrides.

Functions:
  - ground_truth(scene, t, x) -> GroundTruth
  - ground_truth_batch(scene, t, points) -> (distance, gradient, inside)
  - scene_from_dict(doc) -> Scene
  - ball_on_table_scene(), room_scene()
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from gp_distance_mapper.geometry.features.transforms.transforms import (
    CameraIntrinsics,
    GeometryError,
    Point3,
    Pose,
    look_at,
)
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams

logger = logging.getLogger(__name__)

PLANE = "plane"
SPHERE = "sphere"
BOX = "box"
PRIMITIVE_KINDS = (PLANE, SPHERE, BOX)


class MotionTrack:
    """
    Rigid motion through keyframes: positions interpolate linearly, orientations by slerp, and
    the pose is held constant before the first and after the last keyframe.
    """

    def __init__(self, times: Sequence[float], positions: Sequence[Point3], quaternions: Optional[Sequence] = None):
        self.times = np.asarray(times, dtype=np.float64).reshape(-1)
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(self.times) == 0 or len(self.times) != len(self.positions):
            raise GeometryError("A motion track needs one position per keyframe time")
        if np.any(np.diff(self.times) <= 0.0):
            raise GeometryError("Keyframe times must be strictly increasing")
        if quaternions is None:
            quaternions = np.tile([0.0, 0.0, 0.0, 1.0], (len(self.times), 1))
        self.rotations = Rotation.from_quat(np.asarray(quaternions, dtype=np.float64).reshape(-1, 4))
        self._slerp = Slerp(self.times, self.rotations) if len(self.times) > 1 else None

    @classmethod
    def fixed(cls, pose: Pose) -> "MotionTrack":
        return cls([0.0], [pose.translation], [pose.quaternion()])

    def pose_at(self, t: float) -> Pose:
        clamped = float(np.clip(t, self.times[0], self.times[-1]))
        position = [np.interp(clamped, self.times, self.positions[:, axis]) for axis in range(3)]
        rotation = self.rotations[0] if self._slerp is None else self._slerp([clamped])[0]
        matrix = rotation.as_matrix()
        u, _, vt = np.linalg.svd(matrix)
        return Pose(u @ vt, position)


@dataclass
class Primitive:
    """Analytic solid (sphere, box) or surface (plane) with a flat colour."""

    kind: str
    motion: MotionTrack
    radius: float = 0.0
    half_extents: np.ndarray = field(default_factory=lambda: np.zeros(3))
    color: Tuple[int, int, int] = (200, 200, 200)
    name: str = ""

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise GeometryError(f"Unknown primitive kind {self.kind!r}")
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if self.kind == SPHERE and not self.radius > 0.0:
            raise GeometryError("Sphere radius must be positive")
        if self.kind == BOX and not np.all(self.half_extents > 0.0):
            raise GeometryError("Box half extents must be positive")

    def intersect(self, t: float, origin: Point3, directions: np.ndarray) -> np.ndarray:
        """
        Ray parameter s > 0 of the first hit of origin + s * direction (inf where missed).
        Directions need not be unit length.
        """
        pose = self.motion.pose_at(t)
        o = (np.asarray(origin, dtype=np.float64) - pose.translation) @ pose.rotation
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3) @ pose.rotation
        hits = np.full(len(d), np.inf)

        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == PLANE:
                s = -o[2] / d[:, 2]
                ok = np.isfinite(s) & (s > 0.0)
                hits[ok] = s[ok]
            elif self.kind == SPHERE:
                a = np.einsum("ij,ij->i", d, d)
                b = d @ o
                c = o @ o - self.radius ** 2
                disc = b * b - a * c
                root = np.sqrt(np.maximum(disc, 0.0))
                near = (-b - root) / a
                far = (-b + root) / a
                s = np.where(near > 0.0, near, far)
                ok = (disc >= 0.0) & (s > 0.0)
                hits[ok] = s[ok]
            else:
                t1 = (-self.half_extents - o) / d
                t2 = (self.half_extents - o) / d
                entry = np.nanmax(np.minimum(t1, t2), axis=1)
                exit_ = np.nanmin(np.maximum(t1, t2), axis=1)
                s = np.where(entry > 0.0, entry, exit_)
                ok = (entry <= exit_) & (exit_ > 0.0)
                hits[ok] = s[ok]
        return hits

    def distance(self, t: float, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unsigned distance, unit gradient away from the surface, and inside flag per point."""
        pose = self.motion.pose_at(t)
        local = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - pose.translation) @ pose.rotation
        if self.kind == PLANE:
            dist = np.abs(local[:, 2])
            grad = np.zeros_like(local)
            grad[:, 2] = np.where(local[:, 2] < 0.0, -1.0, 1.0)
            inside = np.zeros(len(local), dtype=bool)
        elif self.kind == SPHERE:
            norm = np.linalg.norm(local, axis=1)
            dist = norm - self.radius
            grad = local / np.where(norm > 0.0, norm, 1.0)[:, None]
            inside = dist < 0.0
        else:
            q = np.abs(local) - self.half_extents
            outside = np.maximum(q, 0.0)
            dist = np.linalg.norm(outside, axis=1)
            grad = np.sign(local) * outside / np.where(dist > 0.0, dist, 1.0)[:, None]
            inside = q.max(axis=1) < 0.0
        dist = np.where(inside, 0.0, dist)
        grad = np.where(inside[:, None], 0.0, grad)
        return dist, grad @ pose.rotation.T, inside


@dataclass
class GroundTruth:
    distance: float
    gradient: np.ndarray
    inside: bool
    primitive: int


@dataclass
class Scene:
    """A simulated world: primitives, a camera track and the run's overrides."""

    primitives: List[Primitive]
    camera: MotionTrack
    intrinsics: CameraIntrinsics
    width: int = 160
    height: int = 120
    frame_rate: float = 10.0
    duration: float = 0.0
    depth_noise: float = 0.0
    name: str = "scene"
    kernel: KernelParams = field(default_factory=KernelParams)
    fusion: Dict = field(default_factory=dict)
    store: Dict = field(default_factory=dict)

    def camera_pose(self, t: float) -> Pose:
        return self.camera.pose_at(t)

    def frame_times(self) -> np.ndarray:
        count = int(np.floor(self.duration * self.frame_rate + 1e-9)) + 1
        return np.arange(count) / self.frame_rate

    @property
    def shape(self) -> Tuple[int, int]:
        return self.width, self.height


def ground_truth_batch(scene: Scene, t: float, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Minimum unsigned distance over primitives (ties go to the lowest primitive index), the unit
    gradient away from the nearest surface and an inside flag (distance 0, zero gradient).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    results = [p.distance(t, points) for p in scene.primitives]
    if not results:
        return np.full(len(points), np.inf), np.zeros((len(points), 3)), np.zeros(len(points), dtype=bool)
    distances = np.stack([r[0] for r in results])
    gradients = np.stack([r[1] for r in results])
    inside = np.any(np.stack([r[2] for r in results]), axis=0)
    nearest = np.argmin(distances, axis=0)
    columns = np.arange(len(points))
    distance = distances[nearest, columns]
    gradient = np.where(inside[:, None], 0.0, gradients[nearest, columns])
    return np.where(inside, 0.0, distance), gradient, inside


def ground_truth(scene: Scene, t: float, x: Point3) -> GroundTruth:
    points = np.asarray(x, dtype=np.float64).reshape(1, 3)
    distance, gradient, inside = ground_truth_batch(scene, t, points)
    distances = [p.distance(t, points)[0][0] for p in scene.primitives]
    return GroundTruth(float(distance[0]), gradient[0], bool(inside[0]), int(np.argmin(distances)))


# ---------------------------------------------------------------------------- parsing


def _track_from_dict(keyframes: Sequence[dict]) -> MotionTrack:
    times, positions, quaternions = [], [], []
    for key in keyframes:
        times.append(float(key.get("t", 0.0)))
        positions.append(key["position"])
        if "target" in key:
            quaternions.append(look_at(key["position"], key["target"], key.get("up", (0.0, 0.0, 1.0))).quaternion())
        else:
            quaternions.append(key.get("quaternion", (0.0, 0.0, 0.0, 1.0)))
    return MotionTrack(times, positions, quaternions)


def scene_from_dict(doc: dict) -> Scene:
    """Build a Scene from a document already validated against simulation/schemas/scene.json."""
    primitives = [
        Primitive(
            kind=p["kind"],
            motion=_track_from_dict(p["keyframes"]),
            radius=float(p.get("radius", 0.0)),
            half_extents=p.get("half_extents", (0.0, 0.0, 0.0)),
            color=tuple(p.get("color", (200, 200, 200))),
            name=p.get("name", f"{p['kind']}{i}"),
        )
        for i, p in enumerate(doc["primitives"])
    ]
    cam = doc["camera"]
    intrinsics = CameraIntrinsics(
        horizontal_fov=np.radians(cam.get("horizontal_fov_deg", 60.0)),
        vertical_fov=np.radians(cam.get("vertical_fov_deg", 45.0)),
        near=float(cam.get("near", 0.1)),
        far=float(cam.get("far", 4.0)),
    )
    return Scene(
        primitives=primitives,
        camera=_track_from_dict(cam["keyframes"]),
        intrinsics=intrinsics,
        width=int(cam.get("width", 160)),
        height=int(cam.get("height", 120)),
        frame_rate=float(doc.get("frame_rate", 10.0)),
        duration=float(doc.get("duration", 0.0)),
        depth_noise=float(doc.get("depth_noise", 0.0)),
        name=doc.get("name", "scene"),
        kernel=KernelParams.from_dict(doc.get("kernel", {})),
        fusion=dict(doc.get("fusion", {})),
        store=dict(doc.get("store", {})),
    )


# ---------------------------------------------------------------------------- built-in scenes


def ball_on_table_scene(depth_noise: float = 0.002) -> Scene:
    """
    Table top at z = 0 (1.5 m x 1 m), a 0.15 m ball rolling along +x at 0.2 m/s for 5 s and a
    fixed camera 1.5 m above the table, tilted 30 degrees, 160 x 120 returns at 10 Hz.
    """
    table = Primitive(
        kind=BOX,
        motion=MotionTrack([0.0], [(0.0, 0.0, -0.05)]),
        half_extents=(0.75, 0.5, 0.05),
        color=(139, 90, 43),
        name="table",
    )
    ball = Primitive(
        kind=SPHERE,
        motion=MotionTrack([0.0, 5.0], [(-0.5, 0.0, 0.15), (0.5, 0.0, 0.15)]),
        radius=0.15,
        color=(30, 144, 255),
        name="ball",
    )
    eye = (0.0, -1.5 * np.tan(np.radians(30.0)), 1.5)
    return Scene(
        primitives=[table, ball],
        camera=MotionTrack.fixed(look_at(eye, (0.0, 0.0, 0.0))),
        intrinsics=CameraIntrinsics(np.radians(60.0), np.radians(45.0), 0.1, 4.0),
        width=160,
        height=120,
        frame_rate=10.0,
        duration=5.0,
        depth_noise=depth_noise,
        name="ball_on_table",
        kernel=KernelParams(lengthscale=0.05),
    )


def room_scene(depth_noise: float = 0.0) -> Scene:
    """Static room corner: floor, three walls and a box, seen from a slowly panning camera."""
    floor = Primitive(PLANE, MotionTrack([0.0], [(0.0, 0.0, 0.0)]), color=(160, 160, 160), name="floor")
    to_wall = Rotation.from_euler("x", 90.0, degrees=True).as_quat()
    to_side = Rotation.from_euler("y", 90.0, degrees=True).as_quat()
    back = Primitive(PLANE, MotionTrack([0.0], [(0.0, 2.0, 0.0)], [to_wall]), color=(220, 220, 200), name="back")
    left = Primitive(PLANE, MotionTrack([0.0], [(-2.0, 0.0, 0.0)], [to_side]), color=(200, 220, 220), name="left")
    right = Primitive(PLANE, MotionTrack([0.0], [(2.0, 0.0, 0.0)], [to_side]), color=(220, 200, 220), name="right")
    crate = Primitive(
        BOX, MotionTrack([0.0], [(0.4, 0.8, 0.3)]), half_extents=(0.3, 0.3, 0.3), color=(180, 120, 60), name="crate"
    )
    camera = _track_from_dict([
        {"t": 0.0, "position": (-0.6, -1.5, 1.5), "target": (0.0, 1.0, 0.3)},
        {"t": 2.0, "position": (0.6, -1.5, 1.5), "target": (0.0, 1.0, 0.3)},
    ])
    return Scene(
        primitives=[floor, back, left, right, crate],
        camera=camera,
        intrinsics=CameraIntrinsics(np.radians(70.0), np.radians(55.0), 0.1, 5.0),
        width=160,
        height=120,
        frame_rate=2.0,
        duration=2.0,
        depth_noise=depth_noise,
        name="room",
        kernel=KernelParams(),
    )


BUILTIN_SCENES = {
    "ball_on_table": ball_on_table_scene,
    "room": room_scene,
}
