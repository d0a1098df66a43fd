import numpy as np
import pytest
from hypothesis import settings

from ipr.geometry import FREE, UNKNOWN, VisibleSpace, VoxelGrid, convex_hull

settings.register_profile("ipr", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("ipr")


def cube_points(size=1.0, center=(0.0, 0.0, 0.0)):
    s = np.asarray(size, dtype=float) * np.ones(3) / 2
    c = np.asarray(center, dtype=float)
    return np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) * s + c


def icosphere(subdivisions=1):
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache, new = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts)


def slab_space(lo, hi, unknown_lo, unknown_hi, resolution=0.005):
    """Visible space that is FREE everywhere except an axis-aligned UNKNOWN box."""
    grid = VoxelGrid.covering(lo, hi, resolution)
    grid.cells[:] = FREE
    idx = np.argwhere(np.ones(grid.dims, bool))
    c = grid.centers(idx)
    inside = np.all((c >= unknown_lo) & (c <= unknown_hi), axis=1)
    sel = idx[inside]
    grid.cells[sel[:, 0], sel[:, 1], sel[:, 2]] = UNKNOWN
    return VisibleSpace(0, grid)


def in_unknown_brute(vs, points, tol_voxels=1):
    """Oracle: each point's cell, or a neighbor within the tolerance, is UNKNOWN."""
    g = vs.grid
    cells = np.floor((points - g.origin) / g.resolution).astype(int)
    out = []
    for c in cells:
        lo = np.maximum(c - tol_voxels, 0)
        hi = np.minimum(c + tol_voxels + 1, g.dims)
        if np.any(hi <= lo):
            out.append(False)
            continue
        block = g.cells[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        out.append(bool(np.any(block == UNKNOWN)))
    return np.array(out)


@pytest.fixture
def unit_cube():
    return convex_hull(cube_points())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
