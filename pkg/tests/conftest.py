from pathlib import Path

import numpy as np
import pytest

from survscan.core import PointCloud

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def data_dir():
    return DATA


def grid_cloud(nx, ny, spacing, z=0.0, origin=(0.0, 0.0)):
    """Planar regular grid, row-major in y then x."""
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    x = origin[0] + ix.ravel() * spacing
    y = origin[1] + iy.ravel() * spacing
    return PointCloud(np.column_stack([x, y, np.full(x.shape, z)]))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
