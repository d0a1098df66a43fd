"""Candidate full-shape models for partially observed objects.

A model is the convex hull of an object's observed facets together with
hypothesized facets. Hypothesized facets come from mirroring facets across
their own tangent planes and pushing the copy back into occluded space by a
random distance, then repeating on any new hull facets whose orientation has
not been seen yet.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import (DEFAULT_ANGLE_TOL, DEFAULT_RESOLUTION, SURFACE, UNKNOWN, ConvexMesh,
                       DegenerateInput, Facet, GeometryError, NoHiddenSpace, Origin, VisibleSpace,
                       convex_hull, fit_plane, hull_facets, mesh_to_obj, mirror_facet,
                       occupancy_keys, ray_trace_free_distance, replace_points,
                       sample_facet_surface)
from .segmentation import PartialObject

log = logging.getLogger(__name__)

D_MIN = DEFAULT_RESOLUTION


class InvalidPartial(ValueError):
    pass


@dataclass(frozen=True)
class MirrorSampleRange:
    d_min: float
    d_max: float

    def __post_init__(self):
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")

    def sample(self, rng) -> float:
        return float(rng.uniform(self.d_min, self.d_max))


@dataclass(eq=False)
class ObjectModel:
    object_id: int
    observed: list
    hypothesized: list
    hull: ConvexMesh
    volume: float
    signature: str
    is_minimum: bool = False

    @property
    def points(self) -> np.ndarray:
        return np.vstack([f.points for f in self.observed + self.hypothesized])


@dataclass
class HypothesisSet:
    object_id: int
    models: list

    def __len__(self) -> int:
        return len(self.models)

    @property
    def minimum(self) -> ObjectModel:
        for m in self.models:
            if m.is_minimum:
                return m
        return min(self.models, key=lambda m: m.volume)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([m.volume for m in self.models])


@dataclass
class HypothesisConfig:
    d_min: float = D_MIN
    angle_tol: float = DEFAULT_ANGLE_TOL
    timeout: float = 1.0
    max_iterations: int = 8
    redraws: int = 10
    min_facet_area: float = 3e-4
    spacing: float = DEFAULT_RESOLUTION
    tolerance_voxels: int = 1


def signature(mesh: ConvexMesh, resolution: float = DEFAULT_RESOLUTION) -> str:
    """Hash of the occupied cells of ``mesh`` on the global voxel lattice."""
    keys = occupancy_keys(mesh, resolution)
    if len(keys) == 0:
        # sub-voxel shapes: fall back to rounded vertex coordinates
        keys = np.unique(np.round(mesh.vertices / (resolution / 4)).astype(np.int64), axis=0)
    return hashlib.sha1(np.ascontiguousarray(keys, dtype=np.int64).tobytes()).hexdigest()[:20]


def _make_model(object_id, observed, hypothesized, is_minimum=False) -> ObjectModel:
    pts = np.vstack([f.points for f in list(observed) + list(hypothesized)])
    hull = convex_hull(pts)
    return ObjectModel(object_id, list(observed), list(hypothesized), hull, hull.volume,
                       signature(hull), is_minimum)


# ---------------------------------------------------------------------------
# Occluded space per object
# ---------------------------------------------------------------------------

class HiddenSpace:
    """Where each object may place hypothesized geometry.

    A cell is available to object ``i`` when it is UNKNOWN, when it holds
    points of object ``i`` itself, or when it holds points that belong to no
    segmented object (support surfaces). Cells holding other objects' points
    are off limits. ``tolerance_voxels`` dilates the available region when
    checking membership, absorbing quantization at the carving boundary.
    Cells whose centers lie inside known static ``obstacles`` are never
    available.
    """

    def __init__(self, vs: VisibleSpace, partials: Sequence[PartialObject] = (),
                 tolerance_voxels: int = 1, obstacles: Sequence[ConvexMesh] = ()):
        self.vs = vs
        grid = vs.grid
        cells = grid.cells
        self.owner = np.full(cells.shape, -1, dtype=np.int32)
        self.ids = [p.id for p in partials]
        for k, p in enumerate(partials):
            idx, ok = grid.index(p.points)
            idx = idx[ok]
            self.owner[idx[:, 0], idx[:, 1], idx[:, 2]] = k
        self.blocked = np.zeros(cells.shape, dtype=bool)
        if len(obstacles):
            idx = np.indices(grid.dims).reshape(3, -1).T
            centers = grid.centers(idx)
            for mesh in obstacles:
                self.blocked.reshape(-1)[mesh.contains(centers, tol=1e-9)] = True
        self.tolerance_voxels = tolerance_voxels
        self._cache = {}

    def _slot(self, object_id) -> int:
        return self.ids.index(object_id) if object_id in self.ids else -2

    def passable(self, object_id=None) -> np.ndarray:
        key = ("p", object_id)
        if key not in self._cache:
            cells = self.vs.grid.cells
            k = self._slot(object_id)
            ok = (cells == UNKNOWN) | ((cells == SURFACE) & ((self.owner == -1) | (self.owner == k)))
            self._cache[key] = ok & ~self.blocked
        return self._cache[key]

    def allowed(self, object_id=None) -> np.ndarray:
        key = ("a", object_id)
        if key not in self._cache:
            ok = self.passable(object_id)
            if self.tolerance_voxels > 0:
                ok = ndimage.binary_dilation(ok, structure=np.ones((3, 3, 3), bool),
                                             iterations=self.tolerance_voxels)
            self._cache[key] = ok & ~self.blocked
        return self._cache[key]

    def contains(self, points: np.ndarray, object_id=None) -> np.ndarray:
        """Per point: does it fall in space available to ``object_id``?

        Points outside the grid count as available only above the support
        (the grid floor sits on the table top), with the same half-voxel
        slack the support constraint allows.
        """
        grid = self.vs.grid
        idx, ok = grid.index(points)
        out = np.ones(len(idx), dtype=bool)
        below = np.atleast_2d(points)[:, 2] < grid.origin[2] - grid.resolution / 2
        out[below] = False
        sel = ok
        i = idx[sel]
        out[sel] = self.allowed(object_id)[i[:, 0], i[:, 1], i[:, 2]]
        return out


# ---------------------------------------------------------------------------
# Alg. 1
# ---------------------------------------------------------------------------

def flatten_facet(f: Facet) -> Facet:
    """Project the facet's points onto its least-squares plane (denoising)."""
    if len(f.points) < 3:
        return f
    n, d = fit_plane(f.points)
    if n @ f.normal < 0:
        n, d = -n, -d
    pts = f.points - ((f.points @ n) - d)[:, None] * n
    return Facet(f.id, pts, n, f.origin, f.parent)


def prepare_partial(partial: PartialObject, spacing: float = DEFAULT_RESOLUTION / 2) -> PartialObject:
    """Flattened, thinned copy of a partial object used as every model's observed set."""
    if not partial.facets:
        raise InvalidPartial("partial object has no facets")
    out = []
    for f in partial.facets:
        g = flatten_facet(f)
        if len(g.points) > 3:
            keys = np.floor(g.points / spacing).astype(np.int64)
            _, first = np.unique(keys, axis=0, return_index=True)
            g = replace_points(g, g.points[np.sort(first)])
        out.append(g)
    return replace(partial, facets=out)


def minimum_shape(partial: PartialObject, d_min: float = D_MIN) -> ObjectModel:
    """Observed facets plus their mirrors at ``d_min``: the thinnest admissible model."""
    if partial is None or not partial.facets:
        raise InvalidPartial("partial object has no facets")
    mirrors = [mirror_facet(f, d_min) for f in partial.facets]
    try:
        return _make_model(partial.id, partial.facets, mirrors, is_minimum=True)
    except DegenerateInput as exc:
        raise InvalidPartial(f"minimum shape is degenerate: {exc}") from exc


def _mirror_into_hidden(f: Facet, hidden: Optional[HiddenSpace], object_id, rng,
                        cfg: HypothesisConfig) -> Optional[Facet]:
    """Mirror ``f`` at a distance drawn uniformly from [d_min, D_max]; None if impossible.

    The draw is repeated up to ``cfg.redraws`` times while the mirrored copy
    leaves the available space; the whole facet is rejected otherwise.
    """
    if hidden is None:
        return mirror_facet(f, cfg.d_min)
    try:
        d_max = ray_trace_free_distance(f, hidden.vs, hidden.passable(object_id))
    except NoHiddenSpace:
        return None
    lo = min(cfg.d_min, d_max)
    if d_max <= 0:
        return None
    for _ in range(cfg.redraws):
        d = float(rng.uniform(lo, d_max))
        g = mirror_facet(f, d)
        if hidden.contains(g.points, object_id).all():
            return g
    return None


def _is_novel(normal: np.ndarray, known: list, angle_tol: float) -> bool:
    cos_tol = np.cos(angle_tol)
    return all(normal @ k < cos_tol for k in known)


def generate_hypothesis(partial: PartialObject, vs: Optional[VisibleSpace] = None, rng=None,
                        timeout: Optional[float] = None, config: Optional[HypothesisConfig] = None,
                        hidden: Optional[HiddenSpace] = None) -> ObjectModel:
    """Sample one model by iterated mirroring and hull completion.

    Observed facets are mirrored first. Facets of the resulting hull whose
    outward normals differ from every facet seen so far form the next
    frontier; each is mirrored outward (its normal is taken to point inward)
    so the shape can grow into occluded space. The loop ends when the
    frontier is empty, after ``max_iterations`` rounds, or on timeout.
    """
    cfg = config or HypothesisConfig()
    if timeout is not None:
        cfg = replace(cfg, timeout=timeout)
    rng = rng if rng is not None else np.random.default_rng(0)
    if not partial.facets:
        raise InvalidPartial("partial object has no facets")
    if hidden is None and vs is not None:
        hidden = HiddenSpace(vs, [partial], cfg.tolerance_voxels)
    oid = partial.id
    observed = list(partial.facets)
    start = time.perf_counter()
    hyp: list = []
    known = [f.normal for f in observed]
    frontier = list(observed)
    for it in range(cfg.max_iterations):
        for f in frontier:
            g = _mirror_into_hidden(f, hidden, oid, rng, cfg)
            if g is None and f.origin is Origin.OBSERVED:
                # keep the thinnest mirror so every model contains the minimum shape
                g = mirror_facet(f, cfg.d_min)
            if g is not None:
                hyp.append(g)
                known.append(g.normal)
        if time.perf_counter() - start > cfg.timeout:
            log.debug("hypothesis generation timed out after %d rounds", it + 1)
            break
        try:
            hull = convex_hull(np.vstack([f.points for f in observed + hyp]))
        except DegenerateInput:
            break
        frontier = []
        for u in hull_facets(hull, cfg.angle_tol):
            if u.area < cfg.min_facet_area or not _is_novel(u.normal, known, cfg.angle_tol):
                continue
            known.append(u.normal)
            pts = sample_facet_surface(u, cfg.spacing)
            frontier.append(Facet(u.id, pts, -u.normal, Origin.HYPOTHESIZED))
        if not frontier:
            break
    return _make_model(oid, observed, hyp)


def sample_model_set(partial: PartialObject, vs: Optional[VisibleSpace] = None, m: int = 20,
                     seed: int = 0, timeout: Optional[float] = None,
                     config: Optional[HypothesisConfig] = None,
                     hidden: Optional[HiddenSpace] = None, max_attempts: Optional[int] = None,
                     total_timeout: Optional[float] = None) -> HypothesisSet:
    """Up to ``m`` distinct models; the minimum shape is always the first.

    Attempt ``j`` draws from its own stream seeded by (seed, object id, j), so
    the set does not depend on how attempts are scheduled.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    cfg = config or HypothesisConfig()
    if timeout is not None:
        cfg = replace(cfg, timeout=timeout)
    if hidden is None and vs is not None:
        hidden = HiddenSpace(vs, [partial], cfg.tolerance_voxels)
    models = [minimum_shape(partial, cfg.d_min)]
    seen = {models[0].signature}
    attempts = max_attempts if max_attempts is not None else 4 * m
    start = time.perf_counter()
    for j in range(1, attempts + 1):
        if len(models) >= m:
            break
        if total_timeout is not None and time.perf_counter() - start > total_timeout:
            log.info("object %s: model sampling stopped at %d models", partial.id, len(models))
            break
        rng = np.random.default_rng([seed, abs(int(partial.id)), j])
        try:
            model = generate_hypothesis(partial, None, rng, config=cfg, hidden=hidden)
        except GeometryError as exc:
            log.debug("attempt %d failed: %s", j, exc)
            continue
        if model.signature in seen or model.volume < models[0].volume - 1e-9:
            continue
        seen.add(model.signature)
        models.append(model)
    return HypothesisSet(partial.id, models)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def write_bundle(sets: Sequence[HypothesisSet], directory, probabilities: Optional[dict] = None) -> Path:
    """One OBJ per model plus a manifest JSON with volumes and signatures."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"objects": []}
    for hs in sets:
        entries = []
        for j, mdl in enumerate(hs.models):
            name = f"object{hs.object_id}_model{j}.obj"
            (d / name).write_text(mesh_to_obj(mdl.hull))
            e = {"index": j, "obj": name, "volume": mdl.volume, "signature": mdl.signature,
                 "minimum": mdl.is_minimum, "hypothesized_facets": len(mdl.hypothesized)}
            if probabilities is not None:
                e["probability"] = float(probabilities[hs.object_id][j])
            entries.append(e)
        manifest["objects"].append({"object_id": hs.object_id, "models": entries})
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path
