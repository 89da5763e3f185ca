import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from alipp.terrain import CameraConfig, generate_synthetic_terrain

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def raster():
    return generate_synthetic_terrain(7, 64, 48, 4, 6.0, feature_dim=3, resolution_m=1.0, class_bias_std=0.5)


@pytest.fixture
def camera():
    return CameraConfig(width_px=8, height_px=8, gsd_m=1.0, altitude_m=30.0, noise_sigma=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
