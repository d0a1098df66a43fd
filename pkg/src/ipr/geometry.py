"""Geometric kernels: convex hulls, facets, voxel grids and ray marching.

Points are plain ``(N, 3)`` float arrays in meters. Quaternions are stored
scalar-last ``(x, y, z, w)`` throughout the package.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, cKDTree
from scipy.spatial.transform import Rotation

DEFAULT_RESOLUTION = 0.005
DEFAULT_ANGLE_TOL = np.deg2rad(5.0)
COPLANAR_TOL = 1e-7

# VisibleSpace labels
FREE = 0
SURFACE = 1
UNKNOWN = 2

_ids = itertools.count()


class GeometryError(Exception):
    pass


class DegenerateInput(GeometryError):
    """Raised when a point set spans less than three dimensions."""


class NoHiddenSpace(GeometryError):
    """Raised when a facet has no occluded space behind it."""


class Origin(enum.Enum):
    OBSERVED = "observed"
    HYPOTHESIZED = "hypothesized"


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise GeometryError("cannot normalize a zero vector")
    return v / n


def angle_between(a: np.ndarray, b: np.ndarray) -> float:
    c = float(np.dot(unit(a), unit(b)))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def new_id(prefix: str = "f") -> str:
    return f"{prefix}{next(_ids)}"


# ---------------------------------------------------------------------------
# Facets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Facet:
    """A homogeneous surface patch: a point set plus its mean normal."""

    id: str
    points: np.ndarray
    normal: np.ndarray
    origin: Origin = Origin.OBSERVED
    parent: Optional[str] = None
    centroid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise GeometryError("facet needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("facet points must be finite")
        n = unit(self.normal)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "centroid", pts.mean(axis=0))

    @classmethod
    def from_points(cls, points, toward=None, origin=Origin.OBSERVED, id=None, parent=None):
        """Build a facet whose normal is the least-squares plane normal.

        ``toward`` (a point, e.g. the camera center) orients the normal.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = fit_plane(pts)[0]
        if toward is not None and np.dot(np.asarray(toward) - pts.mean(axis=0), n) < 0:
            n = -n
        return cls(id or new_id(), pts, n, origin, parent)

    @property
    def area(self) -> float:
        """Area of the planar convex outline of the points (0 for < 3 points)."""
        return planar_hull_area(self.points, self.normal)


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares plane ``n . x = d`` through ``points``."""
    pts = np.atleast_2d(points)
    c = pts.mean(axis=0)
    if len(pts) < 3:
        return np.array([0.0, 0.0, 1.0]), float(c[2])
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    n = vt[-1]
    return n, float(n @ c)


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = unit(normal)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = unit(np.cross(n, helper))
    return u, np.cross(n, u)


def planar_hull_area(points: np.ndarray, normal: np.ndarray) -> float:
    if len(points) < 3:
        return 0.0
    u, v = plane_basis(normal)
    uv = np.column_stack([points @ u, points @ v])
    try:
        return float(ConvexHull(uv).volume)
    except QhullError:
        return 0.0


def mirror_facet(f: Facet, d: float) -> Facet:
    """Reflect ``f`` across its tangent plane and push it ``d`` behind it."""
    if d <= 0:
        raise ValueError("mirror distance must be positive")
    n = f.normal
    offsets = (f.points - f.centroid) @ n
    pts = f.points - 2.0 * offsets[:, None] * n[None, :] - d * n[None, :]
    return Facet(new_id("h"), pts, -n, Origin.HYPOTHESIZED, f.id)


def facets_intersect(f1: Facet, f2: Facet, tol: float = DEFAULT_RESOLUTION / 2,
                     angle_tol: float = DEFAULT_ANGLE_TOL) -> bool:
    """Whether two facets share space (closer than ``tol``).

    Non-parallel facets that only meet along an edge count as adjacent: they
    intersect only when each one straddles the other's supporting plane.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    dist, _ = cKDTree(f2.points).query(f1.points, k=1, distance_upper_bound=tol + 1e-12)
    if not np.any(np.isfinite(dist)):
        return False
    if angle_between(f1.normal, f2.normal) <= angle_tol or \
            angle_between(f1.normal, -f2.normal) <= angle_tol:
        return True

    def straddles(a: Facet, b: Facet) -> bool:
        s = (a.points - b.centroid) @ b.normal
        return bool(s.max() > tol and s.min() < -tol)

    return straddles(f1, f2) and straddles(f2, f1)


# ---------------------------------------------------------------------------
# Convex meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    volume: float

    @property
    def plane_offsets(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.face_normals, self.vertices[self.faces[:, 0]])

    @property
    def centroid(self) -> np.ndarray:
        return mass_properties(self)[1]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def signed_distance_bound(self, points: np.ndarray) -> np.ndarray:
        """Max over face planes of the signed plane distance (<= 0 inside)."""
        pts = np.atleast_2d(points)
        return (pts @ self.face_normals.T - self.plane_offsets[None, :]).max(axis=1)

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        return self.signed_distance_bound(points) <= tol

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ConvexMesh":
        verts = self.vertices @ rotation.T + translation
        return ConvexMesh(verts, self.faces.copy(), self.face_normals @ rotation.T, self.volume)

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)


def _check_dimension(pts: np.ndarray) -> None:
    if len(pts) < 4:
        raise DegenerateInput("need at least 4 points")
    c = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - c, full_matrices=False)
    spread = np.abs((pts - c) @ vt[-1]).max()
    if spread < COPLANAR_TOL:
        raise DegenerateInput("points are coplanar or collinear")


def convex_hull(points: Sequence) -> ConvexMesh:
    """Convex hull with outward-oriented triangles and exact tetrahedral volume."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("non-finite coordinates")
    _check_dimension(pts)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        # joggled input resolves near-degenerate configurations
        try:
            hull = ConvexHull(pts, qhull_options="QJ")
        except QhullError as exc:
            raise DegenerateInput(str(exc)) from exc
    used = np.unique(hull.simplices)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    faces = remap[hull.simplices]
    normals = hull.equations[:, :3]
    tri = verts[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", cross, normals) < 0
    faces[flip] = faces[flip][:, ::-1]
    volume = _signed_volume(verts, faces)
    return ConvexMesh(verts, faces, normals / np.linalg.norm(normals, axis=1, keepdims=True), volume)


def _signed_volume(verts: np.ndarray, faces: np.ndarray) -> float:
    tri = verts[faces]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def mass_properties(mesh: ConvexMesh, density: float = 1.0):
    """Return (mass, center of mass, inertia about the center of mass)."""
    tri = mesh.vertices[mesh.faces]
    ref = mesh.vertices.mean(axis=0)
    a, b, c = tri[:, 0] - ref, tri[:, 1] - ref, tri[:, 2] - ref
    det = np.einsum("ij,ij->i", a, np.cross(b, c))
    vol = det.sum() / 6.0
    com_local = (det[:, None] * (a + b + c)).sum(axis=0) / (24.0 * vol)
    canon = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 120.0
    mats = np.stack([a, b, c], axis=2)  # columns are the tetra edges
    cov = np.einsum("k,kij,jl,kml->im", det, mats, canon, mats)
    cov = cov - vol * np.outer(com_local, com_local)
    inertia = (np.trace(cov) * np.eye(3) - cov) * density
    return vol * density, com_local + ref, inertia


def hull_facets(mesh: ConvexMesh, angle_tol: float = DEFAULT_ANGLE_TOL) -> list[Facet]:
    """Merge edge-adjacent, near-coplanar hull triangles into facets.

    Regions grow from the largest remaining triangle; a neighbor joins when its
    normal is within ``angle_tol`` of the seed normal, which keeps curved
    surfaces from chaining into one facet.
    """
    if not 0 < angle_tol <= np.pi / 4:
        raise ValueError("angle_tol must be in (0, pi/4]")
    faces = mesh.faces
    tri = mesh.vertices[faces]
    areas = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (i, j, k) in enumerate(faces):
        for e in ((i, j), (j, k), (k, i)):
            edge_faces.setdefault((min(e), max(e)), []).append(fi)
    neighbors: list[list[int]] = [[] for _ in range(len(faces))]
    for fl in edge_faces.values():
        for a in fl:
            neighbors[a].extend(b for b in fl if b != a)

    cos_tol = np.cos(angle_tol)
    label = -np.ones(len(faces), dtype=int)
    regions = []
    for seed in np.argsort(-areas, kind="stable"):
        if label[seed] >= 0:
            continue
        rid = len(regions)
        label[seed] = rid
        members = [seed]
        queue = deque([seed])
        seed_n = mesh.face_normals[seed]
        while queue:
            f = queue.popleft()
            for nb in neighbors[f]:
                if label[nb] < 0 and mesh.face_normals[nb] @ seed_n >= cos_tol:
                    label[nb] = rid
                    members.append(nb)
                    queue.append(nb)
        regions.append(members)

    out = []
    for members in regions:
        m = np.array(members)
        n = (mesh.face_normals[m] * areas[m, None]).sum(axis=0)
        if np.linalg.norm(n) < 1e-15:
            n = mesh.face_normals[m[0]]
        vidx = np.unique(faces[m])
        out.append(Facet(new_id("u"), mesh.vertices[vidx], n, Origin.HYPOTHESIZED))
    return out


def sample_facet_surface(f: Facet, spacing: float) -> np.ndarray:
    """Points on the planar convex outline of ``f`` at roughly ``spacing``."""
    pts = f.points
    if len(pts) < 3:
        return pts.copy()
    u, v = plane_basis(f.normal)
    uv = np.column_stack([pts @ u, pts @ v])
    h = (pts @ f.normal).mean()
    try:
        hull = ConvexHull(uv)
    except QhullError:
        return pts.copy()
    eq = hull.equations
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    gu = np.arange(lo[0], hi[0] + spacing, spacing)
    gv = np.arange(lo[1], hi[1] + spacing, spacing)
    grid = np.array(np.meshgrid(gu, gv, indexing="ij")).reshape(2, -1).T
    inside = (grid @ eq[:, :2].T + eq[:, 2]).max(axis=1) <= 1e-12
    grid = grid[inside]
    # densify the outline too, so thin facets keep their boundary
    ring = uv[hull.vertices]
    edge_pts = []
    for a, b in zip(ring, np.roll(ring, -1, axis=0)):
        k = max(int(np.ceil(np.linalg.norm(b - a) / spacing)), 1)
        t = np.arange(k)[:, None] / k
        edge_pts.append(a + t * (b - a))
    allp = np.vstack([grid] + edge_pts)
    return allp[:, :1] * u + allp[:, 1:2] * v + h * f.normal


def simplify_hull(mesh: ConvexMesh, angle_tol: float = DEFAULT_ANGLE_TOL,
                  min_area_frac: float = 0.0, max_growth: float = 0.15) -> ConvexMesh:
    """Outer approximation of ``mesh`` bounded by its merged facet planes.

    Each facet contributes one supporting plane pushed out to its farthest
    vertex, so the result contains the input hull. Facets smaller than
    ``min_area_frac`` of the surface area are dropped (their corner grows to
    the neighboring planes), unless that inflates the volume by more than
    ``max_growth``. Used for contact and rendering, where noisy hulls would
    otherwise carry hundreds of slivers.
    """
    facets = hull_facets(mesh, angle_tol)
    areas = np.array([f.area for f in facets])
    lo, hi = mesh.bounds
    lo, hi = lo - 1e-4, hi + 1e-4
    interior = mesh.vertices.mean(axis=0)

    def build(keep):
        hs = [np.append(f.normal, -float((f.points @ f.normal).max())) for f, k in zip(facets, keep) if k]
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = 1.0
            hs.append(np.append(e, -hi[axis]))
            hs.append(np.append(-e, lo[axis]))
        verts = HalfspaceIntersection(np.array(hs), interior).intersections
        return convex_hull(verts)

    try:
        simple = build(np.ones(len(facets), bool))
        if min_area_frac > 0:
            keep = areas >= min_area_frac * areas.sum()
            if not keep.all():
                coarse = build(keep)
                if coarse.volume <= simple.volume * (1.0 + max_growth):
                    simple = coarse
    except (QhullError, GeometryError, ValueError):
        return mesh
    if len(simple.vertices) >= len(mesh.vertices):
        return mesh
    return simple


def unique_planes(normals: np.ndarray, offsets: np.ndarray, tol: float = 1e-7):
    """Collapse duplicate (normal, offset) rows, e.g. the triangles of one polygon."""
    keep_n, keep_o = [], []
    for n, o in zip(normals, offsets):
        if any(abs(o - ko) < tol and np.all(np.abs(n - kn) < tol) for kn, ko in zip(keep_n, keep_o)):
            continue
        keep_n.append(n)
        keep_o.append(o)
    return np.array(keep_n).reshape(-1, 3), np.array(keep_o)


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = q / np.linalg.norm(q)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @property
    def matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.rotation).as_matrix()

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.matrix.T + self.translation


# ---------------------------------------------------------------------------
# Voxel grids
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    cells: np.ndarray = None

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.origin = np.asarray(self.origin, dtype=float)
        self.dims = tuple(int(d) for d in self.dims)
        if self.cells is None:
            self.cells = np.zeros(self.dims, dtype=np.uint8)
        if self.cells.shape != self.dims:
            raise ValueError("cell array does not match dims")

    @classmethod
    def covering(cls, lo, hi, resolution: float = DEFAULT_RESOLUTION, dtype=np.uint8):
        lo = np.floor(np.asarray(lo) / resolution) * resolution
        dims = np.maximum(np.ceil((np.asarray(hi) - lo) / resolution - 1e-9).astype(int), 1)
        return cls(lo, resolution, tuple(dims), np.zeros(tuple(dims), dtype=dtype))

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.array(self.dims)

    def like(self, dtype=bool, fill=0) -> "VoxelGrid":
        return VoxelGrid(self.origin.copy(), self.resolution, self.dims,
                         np.full(self.dims, fill, dtype=dtype))

    def index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell indices and an in-bounds mask for each point."""
        idx = np.floor((np.atleast_2d(points) - self.origin) / self.resolution).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)
        return idx, ok

    def centers(self, index: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(index) + 0.5) * self.resolution

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells))


def voxelize(mesh: ConvexMesh, resolution: float = DEFAULT_RESOLUTION,
             frame: Optional[VoxelGrid] = None) -> VoxelGrid:
    """Occupancy grid: a cell is occupied iff its center is inside ``mesh``."""
    if frame is None:
        lo, hi = mesh.bounds
        frame = VoxelGrid.covering(lo - resolution, hi + resolution, resolution)
    elif abs(frame.resolution - resolution) > 1e-12:
        raise ValueError("frame resolution does not match")
    out = frame.like(bool)
    lo, hi = mesh.bounds
    a = np.clip(np.floor((lo - frame.origin) / resolution).astype(int), 0, np.array(frame.dims))
    b = np.clip(np.ceil((hi - frame.origin) / resolution).astype(int) + 1, 0, np.array(frame.dims))
    if np.any(b <= a):
        return out
    ii, jj, kk = np.meshgrid(*(np.arange(a[d], b[d]) for d in range(3)), indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    inside = mesh.contains(frame.centers(idx), tol=1e-12)
    sel = idx[inside]
    out.cells[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return out


def occupancy_keys(mesh: ConvexMesh, resolution: float = DEFAULT_RESOLUTION) -> np.ndarray:
    """Occupied cells of ``mesh`` in the global lattice anchored at the origin."""
    lo, hi = mesh.bounds
    a = np.floor(lo / resolution).astype(int)
    b = np.ceil(hi / resolution).astype(int) + 1
    ii, jj, kk = np.meshgrid(*(np.arange(a[d], b[d]) for d in range(3)), indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    inside = mesh.contains((idx + 0.5) * resolution, tol=1e-12)
    return idx[inside]


# ---------------------------------------------------------------------------
# Visible space and ray marching
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class VisibleSpace:
    """Three-state voxel map of one frame: FREE, SURFACE or UNKNOWN."""

    frame_index: int
    grid: VoxelGrid

    def labels_at(self, points: np.ndarray, outside: int = UNKNOWN) -> np.ndarray:
        idx, ok = self.grid.index(points)
        out = np.full(len(idx), outside, dtype=np.uint8)
        i = idx[ok]
        out[ok] = self.grid.cells[i[:, 0], i[:, 1], i[:, 2]]
        return out

    def count(self, label: int) -> int:
        return int(np.count_nonzero(self.grid.cells == label))


def ray_trace_free_distance(f: Facet, vs: VisibleSpace, passable: Optional[np.ndarray] = None,
                            max_points: int = 2000) -> float:
    """Depth of hidden space behind ``f`` along ``-f.normal``.

    Every point of the facet casts a ray stepped at half-voxel intervals;
    a sample is blocked when its cell is not passable (by default: FREE).
    The result is the smallest per-ray reach, clamped to the grid bounds.
    Raises ``NoHiddenSpace`` when some ray is blocked at its first step.
    """
    grid = vs.grid
    if passable is None:
        passable = grid.cells != FREE
    h = grid.resolution / 2.0
    pts = f.points
    if len(pts) > max_points:
        # evenly spaced subset; keeps the extreme points of the facet outline
        keep = np.unique(np.concatenate([
            np.linspace(0, len(pts) - 1, max_points).astype(int),
            pts.argmin(axis=0), pts.argmax(axis=0)]))
        pts = pts[keep]
    direction = -f.normal
    exit_t = _exit_distance(pts, direction, grid.origin, grid.upper)
    if np.any(exit_t <= 0):
        raise NoHiddenSpace("facet lies outside the visible-space grid")
    n_steps = int(np.ceil(exit_t.max() / h))
    t = h * np.arange(1, n_steps + 1)
    samples = pts[:, None, :] + t[None, :, None] * direction[None, None, :]
    idx = np.floor((samples - grid.origin) / grid.resolution).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=2) & (t[None, :] <= exit_t[:, None])
    idxc = np.clip(idx, 0, np.array(grid.dims) - 1)
    ok = passable[idxc[..., 0], idxc[..., 1], idxc[..., 2]] | ~inside
    blocked = ~ok
    first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), n_steps)
    if np.any(first == 0):
        raise NoHiddenSpace("occluded space is empty behind the facet")
    reach = np.where(first < n_steps, t[np.minimum(first, n_steps) - 1], exit_t)
    reach = np.minimum(reach, exit_t)
    return float(reach.min())


def _exit_distance(origins: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(d > 0, (hi - origins) / d, np.where(d < 0, (lo - origins) / d, np.inf))
    return t_hi.min(axis=1)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def mesh_to_obj(mesh: ConvexMesh) -> str:
    lines = ["v " + " ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces]
    return "\n".join(lines) + "\n"


def mesh_from_obj(text: str) -> ConvexMesh:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    verts = np.array(verts, dtype=float)
    faces = np.array(faces, dtype=int)
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return ConvexMesh(verts, faces, n, _signed_volume(verts, faces))


def grid_to_rle(grid: VoxelGrid) -> str:
    """Header line followed by run lengths of alternating 0/1 runs (C order, starting with 0)."""
    o, r, d = grid.origin, grid.resolution, grid.dims
    header = f"origin {o[0]:.9g} {o[1]:.9g} {o[2]:.9g} res {r:.9g} dims {d[0]} {d[1]} {d[2]}"
    flat = (grid.cells.ravel() != 0).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return header + "\n" + " ".join(str(x) for x in runs) + "\n"


def grid_from_rle(text: str) -> VoxelGrid:
    header, body = text.strip().split("\n", 1) if "\n" in text.strip() else (text.strip(), "")
    h = header.split()
    origin = [float(x) for x in h[1:4]]
    res = float(h[5])
    dims = tuple(int(x) for x in h[7:10])
    runs = [int(x) for x in body.split()]
    vals = np.repeat(np.arange(len(runs)) % 2, runs).astype(bool)
    return VoxelGrid(np.array(origin), res, dims, vals.reshape(dims))


def bounding_points(meshes: Iterable[ConvexMesh]) -> tuple[np.ndarray, np.ndarray]:
    ms = list(meshes)
    lo = np.min([m.bounds[0] for m in ms], axis=0)
    hi = np.max([m.bounds[1] for m in ms], axis=0)
    return lo, hi


def replace_points(f: Facet, points: np.ndarray) -> Facet:
    return replace(f, points=points)
