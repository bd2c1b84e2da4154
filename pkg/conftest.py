"""
Shared fixtures for the pointcrack3d tests
"""

import numpy as np
import pytest

from pointcrack3d.core_model import PointCloud


def make_cloud(count=200, seed=0, extent=1.0, crack_every=0, tag="fixture"):
    """Random cloud in [0, extent]^3; every crack_every-th point is a crack point"""
    rng = np.random.default_rng(seed)
    xyz = rng.uniform(0.0, extent, size=(count, 3))
    rgb = rng.integers(0, 256, size=(count, 3))
    intensity = rng.uniform(0.0, 1.0, count)
    label = np.zeros(count, dtype=np.uint8)
    instance = np.zeros(count, dtype=np.int32)
    if crack_every:
        label[::crack_every] = 1
        instance[::crack_every] = 1
    return PointCloud(xyz, rgb, intensity, label, instance, tag)


@pytest.fixture
def cloud_factory():
    return make_cloud


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
