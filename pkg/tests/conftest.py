"""Shared fixtures and the --runslow switch for full-scene runs and latency checks."""

import numpy as np
import pytest

from gp_distance_mapper.geometry.features.transforms.transforms import CameraIntrinsics
from gp_distance_mapper.gp_field.features.kernel.kernel import KernelParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def noiseless_kernel():
    return KernelParams(lengthscale=0.2, signal_variance=1.0, noise_variance=0.0)


@pytest.fixture
def kernel():
    return KernelParams(lengthscale=0.2, signal_variance=1.0, noise_variance=1e-4)


@pytest.fixture
def square_intrinsics():
    """90 degree square field of view, depth range (0.1, 5]."""
    return CameraIntrinsics(horizontal_fov=np.pi / 2, vertical_fov=np.pi / 2, near=0.1, far=5.0)
