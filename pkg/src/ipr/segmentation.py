"""Point-cloud segmentation into partial objects made of observed facets.

Pipeline: strip known support geometry, cluster points into supervoxels with
mean shift, link neighboring supervoxels in a convexity-weighted graph, split
the graph into objects with normalized spectral clustering, then group each
object's supervoxels into facets by clustering their normals.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from sklearn.cluster import KMeans

from .geometry import Facet, Origin, fit_plane, unit

log = logging.getLogger(__name__)

DEFAULT_SPATIAL_BANDWIDTH = 0.02
DEFAULT_COLOR_BANDWIDTH = 0.1
DEFAULT_NORMAL_BANDWIDTH = np.deg2rad(20.0)
ADJACENCY_FACTOR = 1.5
EIGENGAP_EPS = 1e-6
MAX_CLUSTERS = 15
ASSOCIATION_GATE = 0.05


class SingularGraph(UserWarning):
    """All edge weights vanish; connected components are used as clusters."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColoredPoint:
    position: tuple
    color: tuple

    def __post_init__(self):
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("color components must lie in [0, 1]")


@dataclass
class PointCloud:
    """Column-oriented colored cloud; ``colors`` are RGB in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray
    index: np.ndarray = None  # position of each point in the originally loaded cloud

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.colors is None:
            self.colors = np.full((len(self.points), 3), 0.5)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if len(self.colors) != len(self.points):
            raise ValueError("points and colors differ in length")
        if self.index is None:
            self.index = np.arange(len(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, keep) -> "PointCloud":
        return PointCloud(self.points[keep], self.colors[keep], self.index[keep])

    @classmethod
    def from_points(cls, pts: Sequence[ColoredPoint]) -> "PointCloud":
        return cls(np.array([p.position for p in pts]).reshape(-1, 3),
                   np.array([p.color for p in pts]).reshape(-1, 3))

    def to_points(self) -> list:
        return [ColoredPoint(tuple(p), tuple(c)) for p, c in zip(self.points, self.colors)]


@dataclass(eq=False)
class Supervoxel:
    id: int
    center: np.ndarray
    normal: np.ndarray
    members: np.ndarray       # row indices into the segmented cloud
    mean_color: np.ndarray
    points: np.ndarray = field(repr=False, default=None)


@dataclass
class SupervoxelGraph:
    nodes: list
    edges: list                         # (i, j, w_ij) with i < j
    affinity: Optional[dict] = None     # (i, j) -> similarity used by spectral clustering

    def weight_matrix(self, use_affinity: bool = True) -> np.ndarray:
        n = len(self.nodes)
        w = np.zeros((n, n))
        for i, j, wij in self.edges:
            a = self.affinity.get((i, j), wij) if (use_affinity and self.affinity) else wij
            w[i, j] = w[j, i] = a
        return w


@dataclass
class PartialObject:
    id: int
    facets: list
    frame_index: int = 0
    supervoxels: list = field(default_factory=list, repr=False)
    facet_indices: list = field(default_factory=list, repr=False)  # cloud rows per facet

    @property
    def points(self) -> np.ndarray:
        return np.vstack([f.points for f in self.facets])

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


# ---------------------------------------------------------------------------
# Known geometry removal
# ---------------------------------------------------------------------------

def ransac_plane(points: np.ndarray, threshold: float, rng, iterations: int = 200,
                 hint: Optional[tuple] = None, hint_angle: float = np.deg2rad(10.0)):
    """Best-supported plane (normal, offset) with n.x = offset, and its inlier mask.

    With a ``hint`` plane, candidates must agree with its orientation and lie
    within 2 cm of it, which keeps the search on the intended surface.
    """
    n_pts = len(points)
    if n_pts < 3:
        return None, np.zeros(n_pts, dtype=bool)
    best, best_count = None, -1
    for _ in range(iterations):
        tri = points[rng.choice(n_pts, 3, replace=False)]
        nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        ln = np.linalg.norm(nrm)
        if ln < 1e-12:
            continue
        nrm /= ln
        off = nrm @ tri[0]
        if hint is not None:
            hn = unit(np.asarray(hint[0], dtype=float))
            if nrm @ hn < 0:
                nrm, off = -nrm, -off
            if np.arccos(np.clip(nrm @ hn, -1, 1)) > hint_angle or abs(off - hint[1]) > 0.02:
                continue
        count = int(np.count_nonzero(np.abs(points @ nrm - off) < threshold))
        if count > best_count:
            best, best_count = (nrm, off), count
    if best is None:
        if hint is None:
            return None, np.zeros(n_pts, dtype=bool)
        best = (unit(np.asarray(hint[0], dtype=float)), float(hint[1]))
    inl = np.abs(points @ best[0] - best[1]) < threshold
    if inl.sum() >= 3:
        # least-squares refinement on the consensus set
        nrm, off = fit_plane(points[inl])
        best = (nrm, off) if nrm @ best[0] >= 0 else (-nrm, -off)
        inl = np.abs(points @ best[0] - best[1]) < threshold
    return best, inl


def remove_known_geometry(cloud: PointCloud, known_planes=None, effector_model=None,
                          threshold: float = 0.005, seed: int = 0,
                          known_meshes: Sequence = (), min_support: float = 0.3) -> PointCloud:
    """Drop support-plane points (RANSAC), points on known static meshes, and the effector.

    ``known_planes`` lists approximate (normal, offset) planes to refine and
    remove. ``None`` means auto-detect: the dominant plane is removed only if
    it holds at least ``min_support`` of the cloud. ``effector_model`` is a
    sequence of (start, end, radius) capsules swept by the effector.
    """
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    rng = np.random.default_rng(seed)
    keep = np.ones(len(cloud), dtype=bool)
    pts = cloud.points
    if known_planes is None:
        plane, inl = ransac_plane(pts, threshold, rng)
        if plane is not None and inl.mean() >= min_support:
            keep &= ~inl
    else:
        for hint in known_planes:
            _, inl = ransac_plane(pts, threshold, rng, hint=hint)
            keep &= ~inl
    for mesh in known_meshes:
        keep &= ~(mesh.signed_distance_bound(pts) < threshold)
    for start, end, radius in (effector_model or ()):
        a, b = np.asarray(start, float), np.asarray(end, float)
        ab = b - a
        t = np.clip((pts - a) @ ab / max(ab @ ab, 1e-18), 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        keep &= d > radius + threshold
    return cloud.subset(keep)


def remove_outliers(cloud: PointCloud, radius: float = 0.01, min_neighbors: int = 5) -> PointCloud:
    """Drop isolated points, e.g. sensor-noise survivors of plane removal."""
    if len(cloud) == 0:
        return cloud
    counts = cKDTree(cloud.points).query_ball_point(cloud.points, radius, return_length=True)
    return cloud.subset(counts > min_neighbors)


def effector_capsules(actions) -> list:
    return [(a.start_point, a.position(a.duration), a.effector_radius) for a in actions]


# ---------------------------------------------------------------------------
# Mean shift
# ---------------------------------------------------------------------------

def mean_shift(features: np.ndarray, max_iter: int = 300, tol: float = 1e-3) -> np.ndarray:
    """Flat-kernel mean shift with unit bandwidth; returns a cluster label per row.

    Seeds are the occupied cells of a unit grid. Converged modes are merged
    greedily (most supported first) when closer than the bandwidth, then every
    row joins its nearest surviving mode.
    """
    x = np.asarray(features, dtype=float)
    if len(x) == 1:
        return np.zeros(1, dtype=int)
    tree = cKDTree(x)
    bins = np.unique(np.floor(x), axis=0)
    seeds = np.array([x[tree.query(b + 0.5)[1]] for b in bins])
    modes, support = [], []
    for s in seeds:
        m = s
        for _ in range(max_iter):
            nb = tree.query_ball_point(m, 1.0)
            if not nb:
                break
            new = x[nb].mean(axis=0)
            done = np.linalg.norm(new - m) < tol
            m = new
            if done:
                break
        modes.append(m)
        support.append(len(tree.query_ball_point(m, 1.0)))
    modes = np.array(modes)
    order = sorted(range(len(modes)), key=lambda k: (-support[k], tuple(modes[k])))
    kept = []
    for k in order:
        if all(np.linalg.norm(modes[k] - modes[j]) >= 1.0 for j in kept):
            kept.append(k)
    centers = modes[kept]
    _, lab = cKDTree(centers).query(x)
    _, lab = np.unique(lab, return_inverse=True)
    return lab.astype(int)


def point_normals(points: np.ndarray, k: int = 12, toward=None) -> np.ndarray:
    """PCA normals over the k nearest neighbors, oriented toward ``toward``."""
    n = len(points)
    if n < 3:
        return np.tile([0.0, 0.0, 1.0], (n, 1))
    k = min(k, n)
    _, nb = cKDTree(points).query(points, k=k)
    nbr = points[nb]
    c = nbr - nbr.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", c, c)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    if toward is not None:
        flip = np.einsum("ij,ij->i", normals, np.asarray(toward) - points) < 0
        normals[flip] *= -1
    return normals


def _pca_normal(points: np.ndarray, toward) -> np.ndarray:
    toward = np.asarray(toward, dtype=float)
    if len(points) < 3:
        return unit(toward - points.mean(axis=0))
    c = points - points.mean(axis=0)
    _, vecs = np.linalg.eigh(c.T @ c)
    nrm = vecs[:, 0]
    if nrm @ (toward - points.mean(axis=0)) < 0:
        nrm = -nrm
    return nrm


def extract_supervoxels(cloud: PointCloud, spatial_bandwidth: float = DEFAULT_SPATIAL_BANDWIDTH,
                        color_bandwidth: float = DEFAULT_COLOR_BANDWIDTH, camera_position=(0, 0, 0),
                        normal_bandwidth: Optional[float] = None) -> list:
    """Mean-shift supervoxels in the joint scaled position/color space.

    ``spatial_bandwidth`` is the kernel diameter, so supervoxels come out
    roughly one bandwidth across. When ``normal_bandwidth`` (radians) is given, per-point PCA normals join
    the feature vector, which keeps supervoxels from straddling sharp edges.
    """
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    if spatial_bandwidth <= 0 or color_bandwidth <= 0:
        raise ValueError("bandwidths must be positive")
    feats = [cloud.points / (0.5 * spatial_bandwidth), cloud.colors / color_bandwidth]
    if normal_bandwidth is not None:
        nrm = point_normals(cloud.points, toward=camera_position)
        feats.append(nrm / (2.0 * np.sin(normal_bandwidth / 2.0)))
    labels = mean_shift(np.hstack(feats))
    svs = []
    for k in range(labels.max() + 1):
        idx = np.flatnonzero(labels == k)
        pts = cloud.points[idx]
        svs.append(Supervoxel(k, pts.mean(axis=0), _pca_normal(pts, camera_position), idx,
                              cloud.colors[idx].mean(axis=0), pts))
    return svs


# ---------------------------------------------------------------------------
# Graph and spectral clustering
# ---------------------------------------------------------------------------

def convexity_weight(ci, vi, cj, vj) -> float:
    """max{v_i.(c_i - c_j), v_j.(c_j - c_i), 0}: positive across convex edges."""
    ci, vi, cj, vj = (np.asarray(a, dtype=float) for a in (ci, vi, cj, vj))
    return max(float(vi @ (ci - cj)), float(vj @ (cj - ci)), 0.0)


def build_adjacency(svs: Sequence[Supervoxel], spatial_bandwidth: float = DEFAULT_SPATIAL_BANDWIDTH,
                    color_bandwidth: float = DEFAULT_COLOR_BANDWIDTH,
                    concavity_scale: float = 8.0) -> SupervoxelGraph:
    """Link supervoxels whose point sets come within 1.5 spatial bandwidths.

    Edge weights follow the convexity formula exactly. Because that formula
    is zero on flat surfaces as well as concave ones, the graph also carries a
    clustering affinity: color similarity times a convexity factor that is 1
    for flat or convex junctions and decays with normalized concavity.
    """
    svs = list(svs)
    n = len(svs)
    if n == 0:
        return SupervoxelGraph([], [], {})
    pts = np.vstack([s.points for s in svs])
    owner = np.concatenate([np.full(len(s.points), k) for k, s in enumerate(svs)])
    pairs = cKDTree(pts).query_pairs(ADJACENCY_FACTOR * spatial_bandwidth, output_type="ndarray")
    a, b = owner[pairs[:, 0]], owner[pairs[:, 1]]
    diff = a != b
    lo, hi = np.minimum(a[diff], b[diff]), np.maximum(a[diff], b[diff])
    linked = np.unique(np.column_stack([lo, hi]), axis=0) if diff.any() else np.zeros((0, 2), int)
    edges, affinity = [], {}
    for i, j in linked:
        i, j = int(i), int(j)
        si, sj = svs[i], svs[j]
        w = convexity_weight(si.center, si.normal, sj.center, sj.normal)
        edges.append((i, j, w))
        d = np.linalg.norm(si.center - sj.center)
        if d > 0:
            s = max(si.normal @ (si.center - sj.center), sj.normal @ (sj.center - si.center)) / d
        else:
            s = 0.0
        convex = np.exp(concavity_scale * min(s, 0.0))
        dc = np.linalg.norm(si.mean_color - sj.mean_color)
        color = np.exp(-0.5 * (dc / color_bandwidth) ** 2)
        affinity[(i, j)] = float(convex * color)
    return SupervoxelGraph(svs, edges, affinity)


def choose_cluster_count(eigenvalues: np.ndarray, max_k: int = MAX_CLUSTERS) -> int:
    """argmax over k of (lambda_{k+1} - lambda_k) / (lambda_k + eps), k from 1."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))
    lam = np.maximum(lam, 0.0)
    n = len(lam)
    if n <= 1:
        return 1
    kmax = min(max_k, n - 1)
    ratios = [(lam[k] - lam[k - 1]) / (lam[k - 1] + EIGENGAP_EPS) for k in range(1, kmax + 1)]
    return int(np.argmax(ratios)) + 1


def normalized_laplacian(w: np.ndarray) -> np.ndarray:
    deg = w.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(len(w)) - inv[:, None] * w * inv[None, :]


def _components(w: np.ndarray) -> np.ndarray:
    _, lab = connected_components(coo_matrix(w > 0) if w.size else coo_matrix((0, 0)),
                                  directed=False)
    return lab


def spectral_cluster(g: SupervoxelGraph, seed: int = 0, use_affinity: bool = True,
                     n_init: int = 20) -> list:
    """Cluster supervoxels; returns a list of index arrays into ``g.nodes``.

    Isolated nodes form their own components, which the eigengap rule picks
    up as zero eigenvalues.
    """
    n = len(g.nodes)
    if n == 0:
        return []
    if n == 1:
        return [np.array([0])]
    w = g.weight_matrix(use_affinity)
    if not np.any(w > 0):
        structural = np.zeros((n, n))
        for i, j, _ in g.edges:
            structural[i, j] = structural[j, i] = 1.0
        warnings.warn("all edge weights are zero", SingularGraph)
        lab = _components(structural)
        return [np.flatnonzero(lab == k) for k in range(lab.max() + 1)]
    lap = normalized_laplacian(w)
    vals, vecs = np.linalg.eigh(lap)
    k = choose_cluster_count(vals)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    if k == 1:
        lab = np.zeros(n, dtype=int)
    else:
        km = KMeans(n_clusters=k, n_init=n_init, random_state=seed)
        lab = km.fit_predict(emb)
    groups = [np.flatnonzero(lab == c) for c in range(k)]
    groups = [gr for gr in groups if len(gr)]
    # order clusters by their first member for stable ids
    return sorted(groups, key=lambda gr: int(gr[0]))


# ---------------------------------------------------------------------------
# Facets
# ---------------------------------------------------------------------------

def angular_mean_shift(normals: np.ndarray, bandwidth: float = DEFAULT_NORMAL_BANDWIDTH,
                       weights: Optional[np.ndarray] = None, max_iter: int = 100) -> np.ndarray:
    """Mean shift on the unit sphere with a flat kernel of angular radius ``bandwidth``."""
    nrm = np.asarray(normals, dtype=float)
    wts = np.ones(len(nrm)) if weights is None else np.asarray(weights, dtype=float)
    cos_bw = np.cos(bandwidth)
    modes = nrm.copy()
    for _ in range(max_iter):
        inside = (modes @ nrm.T) >= cos_bw - 1e-12
        new = (inside * wts[None, :]) @ nrm
        new /= np.linalg.norm(new, axis=1, keepdims=True)
        done = np.max(np.abs(new - modes)) < 1e-9
        modes = new
        if done:
            break
    support = ((modes @ nrm.T) >= cos_bw) @ wts
    order = sorted(range(len(modes)), key=lambda k: (-support[k], tuple(modes[k])))
    kept = []
    for k in order:
        if all(modes[k] @ modes[j] < cos_bw for j in kept):
            kept.append(k)
    centers = modes[kept]
    lab = np.argmax(nrm @ centers.T, axis=1)
    _, lab = np.unique(lab, return_inverse=True)
    return lab


def decompose_facets(svs: Sequence[Supervoxel], bandwidth: float = DEFAULT_NORMAL_BANDWIDTH,
                     camera_position=(0, 0, 0), object_id: int = 0, frame_index: int = 0,
                     min_facet_points: int = 8, min_facet_fraction: float = 0.06) -> PartialObject:
    """Group an object's supervoxels into facets by clustering their normals.

    Regions holding fewer than ``min_facet_points`` points, or less than
    ``min_facet_fraction`` of the object, are folded into the facet whose
    normal is closest, so every supervoxel lands in one facet. The fraction
    rule absorbs the thin bands of supervoxels that straddle sharp edges.
    """
    svs = list(svs)
    if not svs:
        raise ValueError("cluster is empty")
    normals = np.array([s.normal for s in svs])
    sizes = np.array([len(s.members) for s in svs], dtype=float)
    lab = angular_mean_shift(normals, bandwidth, sizes)
    groups = {}
    for s, l in zip(svs, lab):
        groups.setdefault(int(l), []).append(s)

    def region_normal(members):
        v = np.sum([len(s.members) * s.normal for s in members], axis=0)
        return unit(v)

    counts = {l: sum(len(s.members) for s in m) for l, m in groups.items()}
    floor = max(min_facet_points, min_facet_fraction * sum(counts.values()))
    big = [l for l in groups if counts[l] >= floor]
    if big and len(big) < len(groups):
        centers = {l: region_normal(groups[l]) for l in big}
        for l in [l for l in groups if l not in big]:
            for s in groups.pop(l):
                best = max(big, key=lambda b: (float(s.normal @ centers[b]), -b))
                groups[best].append(s)
    facets, indices = [], []
    cam = np.asarray(camera_position, dtype=float)
    for k, l in enumerate(sorted(groups)):
        members = groups[l]
        pts = np.vstack([s.points for s in members])
        fid = f"t{frame_index}o{object_id}f{k}"
        f = Facet.from_points(pts, toward=cam, id=fid) if len(pts) >= 3 else \
            Facet(fid, pts, region_normal(members), Origin.OBSERVED)
        facets.append(f)
        indices.append(np.concatenate([s.members for s in members]))
    return PartialObject(object_id, facets, frame_index, svs, indices)


# ---------------------------------------------------------------------------
# Frame association
# ---------------------------------------------------------------------------

def associate_frames(prev: Sequence[PartialObject], cur: Sequence[PartialObject],
                     gate: float = ASSOCIATION_GATE) -> dict:
    """Greedy nearest-centroid matching; returns cur id -> prev id (or a fresh id)."""
    pairs = []
    for a in cur:
        for b in prev:
            d = float(np.linalg.norm(a.centroid - b.centroid))
            if d <= gate:
                pairs.append((d, a.id, b.id))
    pairs.sort()
    out, used = {}, set()
    for d, ca, pb in pairs:
        if ca in out or pb in used:
            continue
        out[ca] = pb
        used.add(pb)
    fresh = max([o.id for o in prev] + [o.id for o in cur] + [-1]) + 1
    for a in cur:
        if a.id not in out:
            out[a.id] = fresh
            fresh += 1
    return out


# ---------------------------------------------------------------------------
# End-to-end
# ---------------------------------------------------------------------------

@dataclass
class SegmentationConfig:
    spatial_bandwidth: float = DEFAULT_SPATIAL_BANDWIDTH
    color_bandwidth: float = DEFAULT_COLOR_BANDWIDTH
    normal_bandwidth: float = DEFAULT_NORMAL_BANDWIDTH
    point_normal_features: bool = True
    plane_threshold: float = 0.005
    min_object_points: int = 30
    outlier_radius: float = 0.01
    outlier_neighbors: int = 5
    seed: int = 0


def segment(cloud: PointCloud, camera_position, known_planes=None, known_meshes=(),
            effector_model=None, config: Optional[SegmentationConfig] = None,
            frame_index: int = 0) -> list:
    """Full pipeline from a raw cloud to partial objects."""
    cfg = config or SegmentationConfig()
    cleaned = remove_known_geometry(cloud, known_planes, effector_model, cfg.plane_threshold,
                                    cfg.seed, known_meshes)
    if cfg.outlier_neighbors > 0:
        cleaned = remove_outliers(cleaned, cfg.outlier_radius, cfg.outlier_neighbors)
    if len(cleaned) == 0:
        return []
    svs = extract_supervoxels(cleaned, cfg.spatial_bandwidth, cfg.color_bandwidth, camera_position,
                              cfg.normal_bandwidth if cfg.point_normal_features else None)
    g = build_adjacency(svs, cfg.spatial_bandwidth, cfg.color_bandwidth)
    clusters = spectral_cluster(g, cfg.seed)
    objects = []
    for members in clusters:
        group = [svs[k] for k in members]
        if sum(len(s.members) for s in group) < cfg.min_object_points:
            continue
        obj = decompose_facets(group, cfg.normal_bandwidth, camera_position, len(objects),
                               frame_index)
        obj.facet_indices = [cleaned.index[ix] for ix in obj.facet_indices]
        objects.append(obj)
    return objects


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def read_ply(path) -> PointCloud:
    """ASCII PLY with ``x y z r g b`` vertices; 0-255 colors are rescaled."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    n, props, body = 0, [], 0
    for k, line in enumerate(lines):
        tok = line.split()
        if tok[:2] == ["element", "vertex"]:
            n = int(tok[2])
        elif tok and tok[0] == "property":
            props.append(tok[-1])
        elif tok and tok[0] == "format" and tok[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        elif tok and tok[0] == "end_header":
            body = k + 1
            break
    data = np.array([[float(v) for v in l.split()] for l in lines[body:body + n]]).reshape(n, -1)
    col = {p: i for i, p in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]] if n else np.zeros((0, 3))
    if n and all(c in col for c in ("red", "green", "blue")):
        rgb = data[:, [col["red"], col["green"], col["blue"]]]
    elif n and all(c in col for c in ("r", "g", "b")):
        rgb = data[:, [col["r"], col["g"], col["b"]]]
    else:
        rgb = np.full((n, 3), 0.5)
    if n and rgb.max() > 1.0:
        rgb = rgb / 255.0
    return PointCloud(pts, rgb)


def write_ply(path, cloud: PointCloud) -> None:
    rgb = np.clip(np.round(cloud.colors * 255), 0, 255).astype(int)
    head = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}", "property float x",
            "property float y", "property float z", "property uchar red", "property uchar green",
            "property uchar blue", "end_header"]
    rows = [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}"
            for p, c in zip(cloud.points, rgb)]
    with open(path, "w") as fh:
        fh.write("\n".join(head + rows) + "\n")


def segmentation_to_json(objects: Sequence[PartialObject]) -> str:
    doc = {"objects": []}
    for o in objects:
        facets = []
        for k, f in enumerate(o.facets):
            idx = o.facet_indices[k] if k < len(o.facet_indices) else np.zeros(0, int)
            facets.append({"id": f.id, "normal": f.normal.tolist(), "centroid": f.centroid.tolist(),
                           "points": sorted(int(i) for i in idx)})
        doc["objects"].append({"id": o.id, "frame_index": o.frame_index, "facets": facets})
    return json.dumps(doc, indent=2)
