"""
gp_distance_mapper/mapping/providers/ply_io.py

File formats of the mapper:
  - PLY point clouds (vertex element with x y z and optional red green blue), read and written
    through open3d. Used for map snapshots, warm starts and recorded dataset frames.
  - Query-grid CSV dumps with header `x,y,z,distance,gx,gy,gz`.

Functions:
  - read_ply(path) -> PointCloud
  - write_ply(path, cloud, ascii=True)
  - write_samples_csv(path, points, samples)
"""

import logging
from pathlib import Path

import numpy as np
import open3d as o3d

from gp_distance_mapper.geometry.features.transforms.transforms import PointCloud
from gp_distance_mapper.gp_field.features.local_gp.local_gp import SampleBatch

logger = logging.getLogger(__name__)

SAMPLES_HEADER = "x,y,z,distance,gx,gy,gz"
EMPTY_HEADER = (
    "ply\nformat ascii 1.0\nelement vertex 0\n"
    "property double x\nproperty double y\nproperty double z\nend_header\n"
)


class PlyFormatError(ValueError):
    """Raised when a file is not a readable PLY vertex cloud."""
    pass


def _declared_vertices(path: Path) -> int:
    """
    Vertex count from the PLY header, checked against what the file can hold. open3d reports
    no failure: a cloud it cannot parse comes back sized to the header and zero-filled.
    """
    count = None
    encoding = None
    properties = []
    in_vertex = False
    with path.open("rb") as f:
        if f.readline().strip() != b"ply":
            raise PlyFormatError(f"'{path}' is not a PLY file")
        for raw in f:
            tokens = raw.split()
            if tokens[:1] == [b"format"] and len(tokens) > 1:
                encoding = tokens[1]
            elif tokens[:1] == [b"element"]:
                in_vertex = tokens[1:2] == [b"vertex"]
                if in_vertex:
                    try:
                        count = int(tokens[2])
                    except (IndexError, ValueError) as e:
                        raise PlyFormatError(f"'{path}': bad vertex element {raw!r}") from e
            elif tokens[:1] == [b"property"] and in_vertex:
                properties.append(tokens[-1])
            elif tokens[:1] == [b"end_header"]:
                break
        else:
            raise PlyFormatError(f"'{path}': missing end_header")
        if count is None:
            raise PlyFormatError(f"'{path}': missing vertex element")
        missing = {b"x", b"y", b"z"} - set(properties)
        if count and missing:
            raise PlyFormatError(f"'{path}': vertex element lacks {sorted(m.decode() for m in missing)}")
        if encoding == b"ascii":
            rows = sum(1 for raw in f if raw.strip())
            if rows < count:
                raise PlyFormatError(f"'{path}': expected {count} vertices, found {rows}")
    return count


def read_ply(path: Path) -> PointCloud:
    """
    Read an ASCII or binary PLY point cloud. Non-finite coordinates are kept (ingestion
    filters them).

    Raises:
        PlyFormatError: On a missing file or header, or when open3d cannot load every
            declared vertex.
    """
    path = Path(path)
    if not path.is_file():
        raise PlyFormatError(f"Cannot read PLY '{path}': no such file")
    count = _declared_vertices(path)
    if count == 0:
        return PointCloud.empty()

    with o3d.utility.VerbosityContextManager(o3d.utility.VerbosityLevel.Error):
        pcd = o3d.io.read_point_cloud(str(path), format="ply",
                                      remove_nan_points=False, remove_infinite_points=False)
    points = np.asarray(pcd.points, dtype=np.float64)
    if len(points) != count:
        raise PlyFormatError(f"'{path}': expected {count} vertices, loaded {len(points)}")
    colors = None
    if pcd.has_colors():
        colors = np.clip(np.rint(np.asarray(pcd.colors) * 255.0), 0, 255).astype(np.uint8)
    return PointCloud(points, colors)


def write_ply(path: Path, cloud: PointCloud, ascii: bool = True) -> None:
    """
    Write x y z (double) and red green blue (uchar). open3d prints ASCII coordinates with six
    significant digits; pass ascii=False for an exact binary copy.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if len(cloud) == 0:
        # open3d refuses to write an empty cloud
        path.write_text(EMPTY_HEADER, encoding="utf-8")
        return

    pcd = o3d.geometry.PointCloud(o3d.utility.Vector3dVector(cloud.points))
    # open3d truncates colour * 255 to uchar; the half step keeps every value exact
    pcd.colors = o3d.utility.Vector3dVector((cloud.color_array().astype(np.float64) + 0.5) / 255.0)
    if not o3d.io.write_point_cloud(str(path), pcd, write_ascii=ascii):
        raise PlyFormatError(f"open3d could not write '{path}'")
    logger.debug(f"Wrote {len(cloud)} points to {path}")


def write_samples_csv(path: Path, points: np.ndarray, samples: SampleBatch) -> None:
    """Dump field samples at `points` as `x,y,z,distance,gx,gy,gz`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([np.asarray(points).reshape(-1, 3), samples.distance, samples.gradient])
    np.savetxt(path, table, delimiter=",", header=SAMPLES_HEADER, comments="", fmt="%.9g")
