"""
gp_distance_mapper/gp_field/features/kernel/kernel.py

Squared-exponential covariance and its hyperparameters:

    k(a, b) = sigma^2 * exp(-|a - b|^2 / (2 l^2))

The reverting function of this kernel turns a GP occupancy back into metric distance, so the
same three numbers parameterise training, inference and reverting.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from gp_distance_mapper import config
from gp_distance_mapper.geometry.features.transforms.transforms import Point3

# d_max sentinel, in lengthscales
D_MAX_LENGTHSCALES = 3.0


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the SE kernel (no learning: values are configured)."""

    lengthscale: float = config.LENGTHSCALE
    signal_variance: float = config.SIGNAL_VARIANCE
    noise_variance: float = config.NOISE_VARIANCE

    def __post_init__(self):
        if not self.lengthscale > 0.0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")
        if not self.signal_variance > 0.0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not self.noise_variance >= 0.0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @property
    def d_max(self) -> float:
        """Distance reported when the occupancy carries no information (underflow / no data)."""
        return D_MAX_LENGTHSCALES * self.lengthscale

    @classmethod
    def from_dict(cls, data: dict) -> "KernelParams":
        defaults = cls()
        return cls(
            lengthscale=float(data.get("lengthscale", defaults.lengthscale)),
            signal_variance=float(data.get("signal_variance", defaults.signal_variance)),
            noise_variance=float(data.get("noise_variance", defaults.noise_variance)),
        )


def kernel_se(a: Point3, b: Point3, params: KernelParams) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(params.signal_variance * np.exp(-(diff @ diff) / (2.0 * params.lengthscale ** 2)))


def kernel_matrix(a: np.ndarray, b: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross-covariance between (N, 3) and (M, 3) point sets."""
    sq = cdist(np.asarray(a).reshape(-1, 3), np.asarray(b).reshape(-1, 3), "sqeuclidean")
    return params.signal_variance * np.exp(-sq / (2.0 * params.lengthscale ** 2))
