import numpy as np
import pytest

from veinmosaic.core import CameraIntrinsics, MaterialParams
from veinmosaic.simulator import generate_phantom


@pytest.fixture(scope="session")
def material():
    """Calibrated constants of the default phantom."""
    return MaterialParams(
        youngs_modulus=16100.0,
        poisson_ratio=0.5,
        hooke_constant=18.0,
        scanner_area=0.0048,
        sensor_sep_x=53.0,
        sensor_sep_y=53.0,
    )


@pytest.fixture(scope="session")
def intrinsics():
    return CameraIntrinsics(fx=800.0, fy=800.0, cx=319.5, cy=239.5, pixel_pitch=0.05)


@pytest.fixture(scope="session")
def phantom():
    """Medium phantom shared across tests (deterministic)."""
    return generate_phantom(60.0, 50.0, 20.0, seed=5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
