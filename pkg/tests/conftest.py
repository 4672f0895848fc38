import numpy as np
import pytest

from grounddepth.camera import build_camera, intrinsics_matrix
from grounddepth.oracle import random_camera


@pytest.fixture
def identity_cam():
    return build_camera(np.eye(3), np.eye(3), np.zeros(3), 1.65)


@pytest.fixture
def road_cam():
    """f = 100 px, principal point (50, 50), level y-down rig 1.65 m above the road."""
    return build_camera(intrinsics_matrix(100, 100, 50, 50), np.eye(3), np.zeros(3), 1.65, image_size=(101, 151))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_cams():
    gen = np.random.default_rng(2024)
    return [random_camera(gen, 64, 48) for _ in range(100)]
