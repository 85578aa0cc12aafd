import numpy as np
import pytest

from cutcellgs.geometry import build_cut_cell_mesh
from cutcellgs.manufactured import SolovievCase


@pytest.fixture(scope="session")
def soloviev():
    return SolovievCase()


@pytest.fixture(scope="session")
def soloviev_mesh(soloviev):
    return build_cut_cell_mesh(soloviev.grid(61, 81), soloviev.boundary(400))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
