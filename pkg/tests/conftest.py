import numpy as np
import pytest

from spectralign import TriMesh, grid_mesh


@pytest.fixture
def single_triangle():
    return TriMesh(
        np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
        np.array([[0, 1, 2]]),
    )


@pytest.fixture
def tetrahedron():
    v = np.array([[1.0, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]])
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


@pytest.fixture
def small_grid():
    return grid_mesh(6, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
