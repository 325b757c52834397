import numpy as np
import pytest

from violinmorph.mesh import TriangleMesh
from violinmorph.synthetic import disc_plate, reduced_pair


@pytest.fixture
def cube():
    verts = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float)
    faces = [
        [0, 2, 1], [0, 3, 2],
        [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4],
        [1, 2, 6], [1, 6, 5],
        [2, 3, 7], [2, 7, 6],
        [3, 0, 4], [3, 4, 7],
    ]
    return TriangleMesh(verts, faces)


def grid_mesh(nx, ny, spacing=1.0, height=None):
    """Rectangular grid split into triangles; z from ``height(x, y)`` if given."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing,
                         indexing="ij")
    z = np.zeros_like(xs) if height is None else height(xs, ys)
    verts = np.column_stack([xs.ravel(), ys.ravel(), z.ravel()])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = a + ny
            faces.append([a, b, b + 1])
            faces.append([a, b + 1, a + 1])
    return TriangleMesh(verts, faces)


@pytest.fixture
def plane_grid():
    return grid_mesh(8, 8)


@pytest.fixture(scope="session")
def reduction_fixture():
    """Unreduced plate, its slice-reduced counterpart, and an independent
    resampling of the unreduced surface at matched density."""
    unreduced, reduced = reduced_pair(rings=100, sectors=360)
    resampled = disc_plate(radius=50.0, height=12.0, rings=100, sectors=360,
                           groove_radius=40.0, jitter=0.6,
                           rng=np.random.default_rng(7))
    return unreduced, reduced, resampled
