import numpy as np
import pytest

from pcstream.core import PointCloud


def make_cloud(rng: np.random.Generator, n: int, *, span: float = 100.0,
               grid_snap: int | None = None) -> PointCloud:
    """Random cloud with float32-exact coordinates (PLY round-trip safe).

    grid_snap quantizes coordinates to an integer lattice, which produces
    duplicate coordinates and exact distance ties on purpose.
    """
    pos = rng.uniform(-span, span, size=(n, 3))
    if grid_snap:
        pos = np.round(pos / span * grid_snap)
    pos = pos.astype(np.float32).astype(np.float64)
    col = rng.integers(0, 256, size=(n, 3), dtype=np.int64)
    return PointCloud(pos, col)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0xC10D)
