"""Global geometric admissibility of joint scene models, checked before any physics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .geometry import DEFAULT_RESOLUTION, ConvexMesh, Pose, VisibleSpace
from .hypothesis import D_MIN, HiddenSpace, HypothesisSet, ObjectModel

DEFAULT_TOL = DEFAULT_RESOLUTION / 2
SUPPORT_PLANES = (((0.0, 0.0, 1.0), 0.0),)


class AllPruned(RuntimeWarning):
    pass


@dataclass
class JointSceneModel:
    """One chosen model per object, in object order. Models live in world coordinates,
    so every initial pose is the identity."""

    choice: dict
    models: list
    poses: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.poses:
            self.poses = {m.object_id: Pose() for m in self.models}

    @classmethod
    def from_sets(cls, sets: Sequence[HypothesisSet], choice) -> "JointSceneModel":
        if not isinstance(choice, dict):
            choice = {hs.object_id: int(j) for hs, j in zip(sets, choice)}
        return cls(dict(choice), [hs.models[choice[hs.object_id]] for hs in sets])

    @property
    def key(self) -> tuple:
        return tuple(self.choice[m.object_id] for m in self.models)


def _halfspaces(mesh: ConvexMesh):
    return mesh.face_normals, mesh.plane_offsets


def hull_overlap_depth(a: ConvexMesh, b: ConvexMesh) -> float:
    """Largest s such that some point lies at least s inside both hulls.

    Negative values bound the separation: the hulls are disjoint when
    grown by less than ``-s``. Solved as a small linear program.
    """
    na, oa = _halfspaces(a)
    nb, ob = _halfspaces(b)
    A = np.vstack([np.column_stack([na, np.ones(len(na))]), np.column_stack([nb, np.ones(len(nb))])])
    rhs = np.concatenate([oa, ob])
    res = linprog(c=[0, 0, 0, -1.0], A_ub=A, b_ub=rhs, bounds=[(None, None)] * 3 + [(None, 1.0)],
                  method="highs")
    if res.status != 0:
        return -np.inf
    return float(res.x[3])


def _aabb_gap(a: ConvexMesh, b: ConvexMesh) -> float:
    (alo, ahi), (blo, bhi) = a.bounds, b.bounds
    return float(np.max(np.maximum(blo - ahi, alo - bhi)))


def models_overlap(a: ObjectModel, b: ObjectModel, tol: float = DEFAULT_TOL) -> bool:
    """Do two models interpenetrate by more than half of ``tol``?"""
    if _aabb_gap(a.hull, b.hull) > -tol:
        return False
    return hull_overlap_depth(a.hull, b.hull) > tol / 2


def hidden_within_unknown(model: ObjectModel, hidden: HiddenSpace, band: float = D_MIN + DEFAULT_TOL) -> bool:
    """Every hypothesized facet point lies in space available to the model's object.

    Points within ``band`` of the object's own observed points are exempt. That
    band is the minimum shape's thickness, where sensor noise alone decides
    between carved-free and unknown cells along the silhouette.
    """
    for f in model.hypothesized:
        ok = hidden.contains(f.points, model.object_id)
        if not ok.all() and not _near_observed(model, f.points[~ok], band):
            return False
    return True


def _near_observed(model: ObjectModel, points: np.ndarray, band: float) -> bool:
    if band <= 0 or not model.observed:
        return False
    tree = cKDTree(np.vstack([g.points for g in model.observed]))
    d, _ = tree.query(points, distance_upper_bound=band + 1e-12)
    return bool(np.isfinite(d).all())


def above_support(model: ObjectModel, planes=SUPPORT_PLANES, tol: float = DEFAULT_TOL,
                  band: float = D_MIN + DEFAULT_TOL) -> bool:
    """No hull vertex lies more than ``tol`` below a support plane.

    Vertices within ``band`` of the observed points may sink up to ``band``:
    a minimum-shape mirror of a sloped facet that meets the table does so.
    """
    pts = model.hull.vertices
    for n, o in planes:
        h = pts @ np.asarray(n, dtype=float) - o
        bad = h < -tol
        if bad.any() and (np.min(h) < -band or not _near_observed(model, pts[bad], band)):
            return False
    return True


def clear_of_statics(model: ObjectModel, statics: Sequence[ConvexMesh] = (),
                     tol: float = DEFAULT_TOL) -> bool:
    """The model does not sink into known static geometry by more than half of ``tol``."""
    for mesh in statics:
        (alo, ahi), (blo, bhi) = model.hull.bounds, mesh.bounds
        if np.max(np.maximum(blo - ahi, alo - bhi)) > -tol:
            continue
        if hull_overlap_depth(model.hull, mesh) > tol / 2:
            return False
    return True


def single_model_valid(model: ObjectModel, hidden: Optional[HiddenSpace],
                       planes=SUPPORT_PLANES, tol: float = DEFAULT_TOL,
                       statics: Sequence[ConvexMesh] = ()) -> bool:
    if not above_support(model, planes, tol):
        return False
    if not clear_of_statics(model, statics, tol):
        return False
    return hidden is None or hidden_within_unknown(model, hidden)


def _as_hidden(vs) -> Optional[HiddenSpace]:
    if vs is None or isinstance(vs, HiddenSpace):
        return vs
    if isinstance(vs, VisibleSpace):
        return HiddenSpace(vs)
    seq = list(vs)
    return _as_hidden(seq[0]) if seq else None


def check_constraints(x: JointSceneModel, vs=None, planes=SUPPORT_PLANES, tol: float = DEFAULT_TOL,
                      pair_cache: Optional[dict] = None, statics: Sequence[ConvexMesh] = ()) -> bool:
    """(a) no two objects interpenetrate, nor an object and known static
    geometry, (b) hypothesized facets stay in hidden space of frame 0, (c)
    nothing sinks into a support plane.

    ``vs`` may be a ``HiddenSpace``, a ``VisibleSpace`` or a sequence whose
    first element is used.
    """
    hidden = _as_hidden(vs)
    for m in x.models:
        if not single_model_valid(m, hidden, planes, tol, statics):
            return False
    return pairs_disjoint(x.models, tol, pair_cache)


def pairs_disjoint(models: Sequence[ObjectModel], tol: float = DEFAULT_TOL,
                   pair_cache: Optional[dict] = None) -> bool:
    """Constraint (a) alone: no two of ``models`` interpenetrate."""
    ms = list(models)
    for p in range(len(ms)):
        for q in range(p + 1, len(ms)):
            a, b = ms[p], ms[q]
            if pair_cache is not None:
                key = (a.object_id, a.signature, b.object_id, b.signature)
                hit = pair_cache.get(key)
                if hit is None:
                    hit = pair_cache[key] = models_overlap(a, b, tol)
            else:
                hit = models_overlap(a, b, tol)
            if hit:
                return False
    return True


def prune_hypotheses(sets: Sequence[HypothesisSet], vs=None, planes=SUPPORT_PLANES,
                     tol: float = DEFAULT_TOL, statics: Sequence[ConvexMesh] = ()) -> list:
    """Drop models failing the single-model checks; reinstate the minimum shape
    for an object that would otherwise lose every model."""
    hidden = _as_hidden(vs)
    out = []
    for hs in sets:
        keep = [m for m in hs.models if single_model_valid(m, hidden, planes, tol, statics)]
        if not keep:
            keep = [hs.minimum]
        out.append(HypothesisSet(hs.object_id, keep))
    return out
