"""
gp_distance_mapper/geometry/features/voxel_grid/voxel_grid.py

Voxel hashing and centroid downsampling on a grid anchored at the world origin
(voxel index = floor(coord / resolution)), so downsampling never depends on the sensor pose.
"""

import numpy as np

from gp_distance_mapper.geometry.features.transforms.transforms import GeometryError, PointCloud

# 21 bits per axis: +-1M voxels, i.e. +-10 km at 1 cm.
_AXIS_BITS = 21
_AXIS_OFFSET = 1 << (_AXIS_BITS - 1)
_AXIS_MASK = (1 << _AXIS_BITS) - 1


def voxel_indices(points: np.ndarray, resolution: float) -> np.ndarray:
    """Integer (N, 3) voxel coordinates."""
    if not resolution > 0.0:
        raise GeometryError(f"Voxel resolution must be positive, got {resolution}.")
    return np.floor(np.asarray(points, dtype=np.float64).reshape(-1, 3) / resolution).astype(np.int64)


def pack_indices(indices: np.ndarray) -> np.ndarray:
    """Pack (N, 3) voxel coordinates into one sortable int64 key per voxel."""
    shifted = (np.asarray(indices, dtype=np.int64) + _AXIS_OFFSET) & _AXIS_MASK
    return (shifted[:, 0] << (2 * _AXIS_BITS)) | (shifted[:, 1] << _AXIS_BITS) | shifted[:, 2]


def voxel_keys(points: np.ndarray, resolution: float) -> np.ndarray:
    return pack_indices(voxel_indices(points, resolution))


def voxel_downsample(cloud: PointCloud, resolution: float) -> PointCloud:
    """
    Keep one point per occupied voxel: the centroid of the voxel's inputs, coloured with the
    colour of the first input that fell in the voxel. Output is ordered by voxel key.

    Raises:
        GeometryError: If resolution is not positive.
    """
    if not resolution > 0.0:
        raise GeometryError(f"Voxel resolution must be positive, got {resolution}.")
    if len(cloud) == 0:
        return PointCloud.empty()

    keys = voxel_keys(cloud.points, resolution)
    _, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    centroids = np.column_stack([
        np.bincount(inverse, weights=cloud.points[:, axis], minlength=len(counts)) / counts
        for axis in range(3)
    ])
    colors = None if cloud.colors is None else cloud.colors[first]
    return PointCloud(centroids, colors)
