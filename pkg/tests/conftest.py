import pytest

from blowup_lab.coeffs import make_coefficients
from blowup_lab.grid_field import SpatialGrid
from blowup_lab.profiles import build_bundle


@pytest.fixture(scope="session")
def line_grid():
    return SpatialGrid.line()


@pytest.fixture(scope="session")
def bundle():
    """Profiles on the operator grid (n=1024, R=32)."""
    return build_bundle(SpatialGrid.line(1024, 32.0))


@pytest.fixture(scope="session")
def phys_grid():
    return SpatialGrid.line(8192, 12.8, decay_scale=0.5)


@pytest.fixture(scope="session")
def free():
    return make_coefficients("free")
