"""
gp_distance_mapper/simulation/providers/dataset.py

Recorded depth-camera sequences on disk:

  <dir>/<timestamp>.ply    one ASCII PLY cloud per frame, in the camera frame
  <dir>/poses.txt          one line per frame: `timestamp tx ty tz qx qy qz qw`
  <dir>/intrinsics.json    {"horizontal_fov", "vertical_fov", "near", "far"} (radians, metres)

A frame's pose is the pose line whose timestamp matches the file stem within 1e-6 s.

Functions:
  - load_dataset(directory) -> iterator of SensorFrame (timestamp order)
  - write_dataset(frames, directory)
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from gp_distance_mapper.geometry.features.transforms.transforms import (
    CameraIntrinsics,
    GeometryError,
    Pose,
    SensorFrame,
    pose_from_quaternion,
    sanitize_cloud,
)
from gp_distance_mapper.mapping.providers.ply_io import PlyFormatError, read_ply, write_ply

logger = logging.getLogger(__name__)

POSES_FILE = "poses.txt"
INTRINSICS_FILE = "intrinsics.json"
TIMESTAMP_TOL = 1e-6


class DatasetError(RuntimeError):
    """Raised when a recorded sequence cannot be read; carries the failing frame index."""

    def __init__(self, message: str, frame_index: Optional[int] = None):
        super().__init__(message if frame_index is None else f"frame {frame_index}: {message}")
        self.frame_index = frame_index


def _read_poses(path: Path) -> List[Tuple[float, Pose]]:
    poses = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        values = line.split()
        if len(values) != 8:
            raise DatasetError(f"{path.name}:{n}: expected 8 values, got {len(values)}")
        try:
            numbers = [float(v) for v in values]
            poses.append((numbers[0], pose_from_quaternion(numbers[1:4], numbers[4:8])))
        except (ValueError, GeometryError) as e:
            raise DatasetError(f"{path.name}:{n}: invalid pose: {e}") from e
    return sorted(poses, key=lambda item: item[0])


def _read_intrinsics(path: Path) -> CameraIntrinsics:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return CameraIntrinsics(
            horizontal_fov=float(data["horizontal_fov"]),
            vertical_fov=float(data["vertical_fov"]),
            near=float(data["near"]),
            far=float(data["far"]),
        )
    except FileNotFoundError as e:
        raise DatasetError(f"Missing {path.name} in {path.parent}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"Invalid {path.name}: {e}") from e


def _frame_files(directory: Path) -> List[Tuple[float, Path]]:
    frames = []
    for path in directory.glob("*.ply"):
        try:
            frames.append((float(path.stem), path))
        except ValueError:
            logger.warning(f"Ignoring {path.name}: file stem is not a timestamp")
    return sorted(frames, key=lambda item: item[0])


def _match_pose(stamp: float, stamps: np.ndarray) -> Optional[int]:
    if len(stamps) == 0:
        return None
    i = int(np.argmin(np.abs(stamps - stamp)))
    return i if abs(stamps[i] - stamp) <= TIMESTAMP_TOL else None


def load_dataset(directory: Path) -> Iterator[SensorFrame]:
    """
    Yield the frames of a recorded sequence in timestamp order. Frames without a pose are
    skipped with a warning; NaN/Inf and non-positive depth returns are dropped and counted
    in SensorFrame.dropped.

    Raises:
        DatasetError: If the directory, the pose file or a PLY cloud cannot be read.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"Dataset directory not found: {directory}")
    files = _frame_files(directory)
    if not files:
        return

    intrinsics = _read_intrinsics(directory / INTRINSICS_FILE)
    pose_path = directory / POSES_FILE
    if not pose_path.exists():
        raise DatasetError(f"Missing {POSES_FILE} in {directory}")
    poses = _read_poses(pose_path)
    stamps = np.array([stamp for stamp, _ in poses])

    index = 0
    for stamp, path in files:
        match = _match_pose(stamp, stamps)
        if match is None:
            logger.warning(f"No pose for frame {path.name}; skipping")
            continue
        try:
            raw = read_ply(path)
        except PlyFormatError as e:
            raise DatasetError(str(e), frame_index=index) from e
        cloud, dropped = sanitize_cloud(raw)
        if dropped:
            logger.warning(f"Frame {index} ({path.name}): dropped {dropped} invalid returns")
        yield SensorFrame(cloud, poses[match][1], intrinsics, timestamp=stamp, index=index, dropped=dropped)
        index += 1


def write_dataset(frames: Iterable[SensorFrame], directory: Path) -> int:
    """Record frames in the layout read by load_dataset. Returns the number of frames written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    intrinsics: Dict[str, float] = {}
    count = 0
    for frame in frames:
        write_ply(directory / f"{frame.timestamp:.6f}.ply", frame.cloud)
        values = [frame.timestamp, *frame.pose.translation, *frame.pose.quaternion()]
        lines.append(" ".join(repr(float(v)) for v in values))
        intrinsics = {
            "horizontal_fov": frame.intrinsics.horizontal_fov,
            "vertical_fov": frame.intrinsics.vertical_fov,
            "near": frame.intrinsics.near,
            "far": frame.intrinsics.far,
        }
        count += 1
    (directory / POSES_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if intrinsics:
        (directory / INTRINSICS_FILE).write_text(json.dumps(intrinsics, indent=2), encoding="utf-8")
    logger.info(f"Wrote {count} frames to {directory}")
    return count
