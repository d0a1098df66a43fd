"""Posterior over object models by physics-scored Monte-Carlo tree sampling.

A rollout places objects one at a time. At each stage every unplaced object
is tried with each of its models in a world where placed objects keep their
chosen models and the rest stand in as minimum shapes; the settle
displacement of the tried object gives its exploration probability. The
object whose row carries the most mass is placed by drawing from its row.
The completed joint model is simulated (settle, then the pushes), rendered,
and compared with the observed depth frames; the resulting likelihood times
the prior, divided by the probability of the draws, is the rollout's
importance weight.
"""
from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constraints import DEFAULT_TOL, SUPPORT_PLANES, JointSceneModel, pairs_disjoint, single_model_valid
from .geometry import ConvexMesh, VisibleSpace
from .hypothesis import HiddenSpace, HypothesisSet
from .simulator.render import PredictedObservation, observation_distance, render_depth, render_trace
from .simulator.world import (DEFAULT_DENSITY, DEFAULT_FRICTION, BodyShape, Diverged, PushAction,
                              RigidBody, World, replay_actions, settle)

log = logging.getLogger(__name__)

STATIC_ID_BASE = 1000
EXHAUSTIVE_LIMIT = 10_000
ESTIMATORS = ("grouped", "joint", "per_object")


class NoValidModels(RuntimeError):
    pass


class TooLarge(ValueError):
    pass


class AllZeroRow(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorSpec:
    kind: str = "uniform"     # "uniform" or "size"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "size"):
            raise ValueError(f"unknown prior kind {self.kind!r}")

    def probabilities(self, volumes, valid=None) -> np.ndarray:
        """Normalized prior over one object's models; invalid models get 0."""
        v = np.asarray(volumes, dtype=float)
        valid = np.ones(len(v), bool) if valid is None else np.asarray(valid, bool)
        p = np.zeros(len(v))
        if not valid.any():
            return p
        if self.kind == "uniform":
            p[valid] = 1.0
        else:
            vv = v[valid]
            span = vv.max() - vv.min()
            p[valid] = np.exp(-self.beta * (vv - vv.min()) / (span + 1e-12))
        return p / math.fsum(p)


@dataclass
class InferenceConfig:
    rollouts: int = 500
    alpha_likelihood: float = 10.0
    alpha_explore: float = 50.0
    timeout: Optional[float] = None
    seed: int = 0
    simulate_actions: bool = True
    prior: PriorSpec = field(default_factory=PriorSpec)
    frame_stride: int = 1
    settle_after: float = 0.5
    settle_time: float = 3.0
    settle_min_time: float = 0.15
    density: float = DEFAULT_DENSITY
    friction: float = DEFAULT_FRICTION
    tol: float = DEFAULT_TOL
    explore_floor: float = 0.05     # defensive mixture with the uniform row
    estimator: str = "grouped"      # "grouped", "joint" or "per_object"
    group_margin: float = 0.01      # clearance below which two objects may interact
    later_index_wins: bool = True   # tie rule of the object selection

    def __post_init__(self):
        if self.rollouts < 0:
            raise ValueError("rollouts must be >= 0")
        if self.frame_stride < 1:
            raise ValueError("frame_stride must be >= 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not 0.0 <= self.explore_floor < 1.0:
            raise ValueError("explore_floor must lie in [0, 1)")


def _boxes_overlap(a, b) -> bool:
    return bool(np.all(a[0] <= b[1]) and np.all(b[0] <= a[1]))


def interaction_groups(sets: Sequence[HypothesisSet], actions: Sequence[PushAction] = (),
                       camera=None, margin: float = 0.01) -> list[list[int]]:
    """Partition object indices into groups that cannot affect each other's score.

    Each object is bounded by the box around all of its models, widened by
    ``margin``. Objects a push can reach are widened horizontally by the push
    length, transitively. Two objects share a group when their boxes meet or
    when the boxes' image footprints overlap (one could hide the other).
    """
    n = len(sets)
    boxes = []
    for hs in sets:
        v = np.concatenate([m.hull.vertices for m in hs.models])
        boxes.append([v.min(axis=0) - margin, v.max(axis=0) + margin])
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def join_touching():
        for a in range(n):
            for b in range(a + 1, n):
                if _boxes_overlap(boxes[a], boxes[b]):
                    parent[find(a)] = find(b)

    sweeps = []
    for act in actions:
        end, reach = act.position(act.duration), act.effector_radius + margin
        sweeps.append(([np.minimum(act.start_point, end) - reach,
                        np.maximum(act.start_point, end) + reach], act.speed * act.duration))
    grown = set()
    changed = True
    while changed:
        changed = False
        join_touching()
        for a, (sweep, length) in enumerate(sweeps):
            roots = {find(k) for k in range(n) if _boxes_overlap(boxes[k], sweep)}
            for k in range(n):
                if (k, a) not in grown and find(k) in roots:
                    grow = np.array([length, length, 0.0])
                    boxes[k] = [boxes[k][0] - grow, boxes[k][1] + grow]
                    grown.add((k, a))
                    changed = True
    if camera is not None:
        foot = []
        for lo, hi in boxes:
            corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
                                for z in (lo[2], hi[2])])
            uvz = camera.project(corners)
            if np.any(uvz[:, 2] <= 0):
                foot.append(None)  # reaches behind the camera: overlaps everything
            else:
                foot.append([uvz[:, :2].min(axis=0) - 1, uvz[:, :2].max(axis=0) + 1])
        for a in range(n):
            for b in range(a + 1, n):
                if foot[a] is None or foot[b] is None or _boxes_overlap(foot[a], foot[b]):
                    parent[find(a)] = find(b)
    groups: dict = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    return sorted(groups.values())


@dataclass
class RolloutState:
    placed: list
    model: list
    stage: int = 1

    @classmethod
    def empty(cls, n: int) -> "RolloutState":
        return cls([False] * n, [-1] * n, 1)


@dataclass
class ExplorationTable:
    """Normalized rows for the unplaced objects plus the raw row masses."""

    rows: dict
    mass: dict

    def row(self, k: int) -> np.ndarray:
        return self.rows[k]


# ---------------------------------------------------------------------------
# Posterior table
# ---------------------------------------------------------------------------

@dataclass
class PosteriorTable:
    object_ids: list
    probabilities: list
    signatures: list
    volumes: list
    rollout_count: int = 0
    ess: dict = field(default_factory=dict)
    runtime: float = 0.0

    def row(self, object_id) -> np.ndarray:
        return self.probabilities[self.object_ids.index(object_id)]

    def as_dict(self) -> dict:
        return {oid: p for oid, p in zip(self.object_ids, self.probabilities)}

    def entropy(self, object_id) -> float:
        p = self.row(object_id)
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    def total_variation(self, other: "PosteriorTable") -> dict:
        return {oid: 0.5 * float(np.abs(self.row(oid) - other.row(oid)).sum()) for oid in self.object_ids}

    def to_json(self) -> str:
        doc = {str(oid): [{"model_signature": s, "probability": float(p), "volume": float(v)}
                          for s, p, v in zip(sig, prob, vol)]
               for oid, sig, prob, vol in zip(self.object_ids, self.signatures, self.probabilities,
                                              self.volumes)}
        return json.dumps({"posterior": doc, "rollout_count": self.rollout_count,
                           "ess": {str(k): v for k, v in self.ess.items()}}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PosteriorTable":
        doc = json.loads(text)
        ids = sorted(doc["posterior"], key=int)
        post = doc["posterior"]
        return cls([int(i) for i in ids],
                   [np.array([e["probability"] for e in post[i]]) for i in ids],
                   [[e["model_signature"] for e in post[i]] for i in ids],
                   [[e["volume"] for e in post[i]] for i in ids],
                   doc.get("rollout_count", 0), {int(k): v for k, v in doc.get("ess", {}).items()})


def _normalize_rows(sums: list) -> list:
    out = []
    for s in sums:
        s = np.asarray(s, dtype=float)
        z = math.fsum(s)
        out.append(s / z if z > 0 else np.full(len(s), 1.0 / len(s)))
    return out


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------

@dataclass
class _Settled:
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    warm: tuple
    displacement: dict


class Engine:
    """Shared state of one inference problem: world building, caches and scoring.

    Every simulated quantity is a pure function of the joint choice tuple, and
    all simulations start from cached settled states, so results do not
    depend on the order in which rollouts visit joint models.
    """

    def __init__(self, sets: Sequence[HypothesisSet], vs=None,
                 observations: Sequence[PredictedObservation] = (),
                 actions: Sequence[PushAction] = (), cfg: Optional[InferenceConfig] = None,
                 planes=SUPPORT_PLANES, statics: Sequence[ConvexMesh] = ()):
        if not sets or any(len(hs) == 0 for hs in sets):
            raise NoValidModels("every object needs at least one model")
        self.cfg = cfg or InferenceConfig()
        self.sets = list(sets)
        self.ids = [hs.object_id for hs in self.sets]
        self.n = len(self.sets)
        if vs is not None and not isinstance(vs, HiddenSpace):
            if not isinstance(vs, VisibleSpace):
                vs = list(vs)[0]
            vs = HiddenSpace(vs)
        self.hidden = vs
        self.planes = [(tuple(np.asarray(n, float)), float(o)) for n, o in planes]
        self.statics = list(statics)
        self.observations = list(observations)
        self.actions = list(actions)
        self.valid = [np.array([single_model_valid(m, self.hidden, self.planes, self.cfg.tol,
                                                   self.statics)
                                for m in hs.models]) for hs in self.sets]
        for k, hs in enumerate(self.sets):
            if not self.valid[k].any():
                # same fallback as pruning: the minimum shape stands in when noise rules out every model
                mins = [j for j, m in enumerate(hs.models) if m.is_minimum]
                if not mins:
                    raise NoValidModels(f"object {hs.object_id} has no admissible model")
                self.valid[k][mins[0]] = True
        self.prior = [self.cfg.prior.probabilities(hs.volumes, self.valid[k])
                      for k, hs in enumerate(self.sets)]
        self.min_index = [hs.models.index(hs.minimum) if self.valid[k][hs.models.index(hs.minimum)]
                          else int(np.flatnonzero(self.valid[k])[0])
                          for k, hs in enumerate(self.sets)]
        self._shapes: dict = {}
        self._static_shapes = [BodyShape(m) for m in self.statics]
        self._pairs: dict = {}
        self._valid: dict = {}
        self._settled: dict = {}
        self._scores: dict = {}
        self._explore: dict = {}
        self.counters = {"settles": 0, "scores": 0}
        self.groups = self._groups()

    def derive(self, cfg: InferenceConfig) -> "Engine":
        """Engine for another variant over the same problem, sharing every cache.

        Only the prior, the action flag, the rollout budget and the seed may
        differ; the cached simulations do not depend on them.
        """
        fixed = ("alpha_explore", "frame_stride", "settle_after", "settle_time", "settle_min_time",
                 "density", "friction", "tol", "explore_floor", "later_index_wins")
        for name in fixed:
            if getattr(cfg, name) != getattr(self.cfg, name):
                raise ValueError(f"derived engine must keep {name}")
        other = copy.copy(self)
        other.cfg = cfg
        other.prior = [cfg.prior.probabilities(hs.volumes, self.valid[k]) for k, hs in enumerate(self.sets)]
        other.groups = other._groups()
        return other

    def _groups(self) -> list[list[int]]:
        """Objects whose likelihood terms are pooled into one importance weight."""
        if self.cfg.estimator == "joint":
            return [list(range(self.n))]
        if self.cfg.estimator == "per_object":
            return [[k] for k in range(self.n)]
        actions = self.actions if self.cfg.simulate_actions else ()
        camera = self.observations[0].camera if self.observations else None
        return interaction_groups(self.sets, actions, camera, self.cfg.group_margin)

    # -- worlds -------------------------------------------------------------
    def shape(self, k: int, j: int) -> BodyShape:
        s = self._shapes.get((k, j))
        if s is None:
            s = self._shapes[(k, j)] = BodyShape(self.sets[k].models[j].hull)
        return s

    def build_world(self, key: tuple, density: Optional[float] = None,
                    friction: Optional[float] = None) -> World:
        d = self.cfg.density if density is None else density
        f = self.cfg.friction if friction is None else friction
        bodies = [RigidBody(self.ids[k], self.shape(k, j), density=d, friction=f)
                  for k, j in enumerate(key)]
        bodies += [RigidBody(STATIC_ID_BASE + s, sh, static=True, friction=f)
                   for s, sh in enumerate(self._static_shapes)]
        return World(bodies, planes=self.planes)

    def joint(self, key: tuple) -> JointSceneModel:
        return JointSceneModel.from_sets(self.sets, key)

    def is_valid(self, key: tuple) -> bool:
        hit = self._valid.get(key)
        if hit is None:
            # single-model checks are precomputed; only the pairwise test remains
            ok = all(self.valid[k][j] for k, j in enumerate(key))
            hit = ok and pairs_disjoint(self.joint(key).models, self.cfg.tol, self._pairs)
            self._valid[key] = hit
        return hit

    def settled(self, key: tuple) -> Optional[_Settled]:
        """Settled state of the joint model ``key``; None when the simulation diverges."""
        if key in self._settled:
            return self._settled[key]
        w = self.build_world(key)
        self.counters["settles"] += 1
        try:
            _, disp = settle(w, t_max=self.cfg.settle_time, min_time=self.cfg.settle_min_time)
            pos, quat, vel, omega = w.state()
            out = _Settled(pos, quat, vel, omega, w._warm, disp)
        except Diverged:
            out = None
        self._settled[key] = out
        return out

    def restore(self, key: tuple) -> Optional[World]:
        st = self.settled(key)
        if st is None:
            return None
        w = self.build_world(key)
        w._store(st.pos, st.quat, st.vel, st.omega)
        w._warm = st.warm
        return w

    # -- exploration (staged worlds) -----------------------------------------
    def staged_key(self, state: RolloutState, k: int, j: int) -> tuple:
        key = [state.model[i] if state.placed[i] else self.min_index[i] for i in range(self.n)]
        key[k] = j
        return tuple(key)

    def exploration(self, state: RolloutState) -> tuple[ExplorationTable, int]:
        """Exploration rows of every unplaced object and the object to place next."""
        ck = tuple(state.model[i] if state.placed[i] else -1 for i in range(self.n))
        hit = self._explore.get(ck)
        if hit is not None:
            return hit
        a = self.cfg.alpha_explore
        rows, mass = {}, {}
        for k in range(self.n):
            if state.placed[k]:
                continue
            raw = np.zeros(len(self.sets[k]))
            for j in range(len(raw)):
                key = self.staged_key(state, k, j)
                if not self.is_valid(key):
                    continue
                st = self.settled(key)
                if st is None:
                    continue
                raw[j] = math.exp(-a * st.displacement[self.ids[k]])
            mass[k] = math.fsum(raw)
            rows[k] = raw
        selected = None
        for k in sorted(rows):
            if selected is None or mass[k] > mass[selected] or (
                    self.cfg.later_index_wins and mass[k] == mass[selected]):
                selected = k
        for k, raw in rows.items():
            z = math.fsum(raw)
            if z > 0:
                p = raw / z
                eps = self.cfg.explore_floor
                if eps > 0:
                    nz = raw > 0
                    p = (1 - eps) * p + eps * nz / nz.sum()
                rows[k] = p
        out = (ExplorationTable(rows, mass), selected)
        self._explore[ck] = out
        return out

    def rollout(self, rng: np.random.Generator) -> tuple[tuple, dict]:
        """One pass of tree sampling; returns the joint choice and per-object draw probability."""
        state = RolloutState.empty(self.n)
        q = {}
        for stage in range(1, self.n + 1):
            state.stage = stage
            table, k = self.exploration(state)
            row = table.rows[k]
            if table.mass[k] <= 0:
                log.debug("all-zero exploration row for object %s; placing its minimum shape",
                          self.ids[k])
                j, p = self.min_index[k], 1.0
            else:
                cdf = np.cumsum(row)
                j = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(row) - 1))
                while row[j] <= 0:
                    j -= 1
                p = float(row[j])
            state.placed[k] = True
            state.model[k] = j
            q[self.ids[k]] = p
        return tuple(state.model), q

    # -- scoring -------------------------------------------------------------
    def distances(self, key: tuple) -> Optional[dict]:
        """Per-object sum over frames of the depth discrepancy; None if the simulation diverges."""
        ck = (self.cfg.simulate_actions, key)
        if ck in self._scores:
            return self._scores[ck]
        self.counters["scores"] += 1
        out = None
        w = self.restore(key)
        if w is not None and self.observations:
            cam = self.observations[0].camera
            frames = [render_depth(w, cam)]
            try:
                if self.cfg.simulate_actions and self.actions and len(self.observations) > 1:
                    trace = replay_actions(w, self.actions, settle_after=self.cfg.settle_after)
                    frames += render_trace(w, trace, cam, self.cfg.frame_stride)
                out = {oid: 0.0 for oid in self.ids}
                n_frames = min(len(frames), len(self.observations)) if self.cfg.simulate_actions else 1
                for t in range(n_frames):
                    d = observation_distance(self.observations[t], frames[t], self.ids)
                    for oid in self.ids:
                        out[oid] += d[oid]
            except Diverged:
                out = None
        elif w is not None:
            out = {oid: 0.0 for oid in self.ids}
        self._scores[ck] = out
        return out

    def log_weight(self, key: tuple, q: dict) -> dict:
        """Per-object log importance weight of one rollout (``-inf`` for weight zero)."""
        if not self.is_valid(key):
            return {oid: -math.inf for oid in self.ids}
        d = self.distances(key)
        if d is None:
            return {oid: -math.inf for oid in self.ids}
        a = self.cfg.alpha_likelihood
        log_q = {oid: math.log(q[oid]) for oid in self.ids}
        log_p = {oid: math.log(self.prior[k][key[k]]) for k, oid in enumerate(self.ids)}
        out = {}
        for g in self.groups:
            members = [self.ids[k] for k in g]
            lw = (-a * math.fsum(d[oid] for oid in members) + math.fsum(log_p[oid] for oid in members)
                  - math.fsum(log_q[oid] for oid in members))
            out.update({oid: lw for oid in members})
        return out

    def joint_log_score(self, key: tuple) -> float:
        """log L(X) + log P(X), or ``-inf`` for inadmissible or diverging joint models."""
        if not self.is_valid(key):
            return -math.inf
        d = self.distances(key)
        if d is None:
            return -math.inf
        a = self.cfg.alpha_likelihood
        return -a * math.fsum(d.values()) + math.fsum(
            math.log(self.prior[k][j]) for k, j in enumerate(key))

    # -- accumulation ----------------------------------------------------------
    def table_from_samples(self, samples: Sequence[tuple], rollouts: int, runtime: float = 0.0) -> PosteriorTable:
        """Marginalize ``(key, log weights)`` samples into a normalized table.

        Weights are shifted by their maximum and summed with ``math.fsum``, so
        the table does not depend on the order of the samples.
        """
        probs, ess = [], {}
        for k, oid in enumerate(self.ids):
            lws = [lw[oid] for _, lw in samples if lw[oid] > -math.inf]
            cells = [[] for _ in self.sets[k].models]
            if lws:
                top = max(lws)
                ws = []
                for key, lw in samples:
                    if lw[oid] > -math.inf:
                        w = math.exp(lw[oid] - top)
                        cells[key[k]].append(w)
                        ws.append(w)
                s1 = math.fsum(ws)
                s2 = math.fsum(w * w for w in ws)
                ess[oid] = s1 * s1 / s2 if s2 > 0 else 0.0
                probs.append(np.array([math.fsum(c) for c in cells]))
            else:
                ess[oid] = 0.0
                probs.append(self.prior[k].copy())
        return PosteriorTable(list(self.ids), _normalize_rows(probs), self._signatures(),
                              self._volumes(), rollouts, ess, runtime)

    def prior_table(self) -> PosteriorTable:
        return PosteriorTable(list(self.ids), _normalize_rows([p.copy() for p in self.prior]),
                              self._signatures(), self._volumes(), 0, {oid: 0.0 for oid in self.ids})

    def _signatures(self) -> list:
        return [[m.signature for m in hs.models] for hs in self.sets]

    def _volumes(self) -> list:
        return [[float(m.volume) for m in hs.models] for hs in self.sets]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def compute_exploration_probs(state: RolloutState, engine: Engine) -> tuple[ExplorationTable, int]:
    if all(state.placed):
        raise ValueError("every object is already placed")
    return engine.exploration(state)


def rollout(engine: Engine, rng: np.random.Generator) -> tuple[JointSceneModel, dict]:
    key, q = engine.rollout(rng)
    return engine.joint(key), q


def rollout_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def score_and_update(engine: Engine, key: tuple, q: dict, acc: list) -> list:
    """Append the rollout's per-object log weights to the accumulator ``acc``."""
    acc.append((tuple(key), engine.log_weight(tuple(key), q)))
    return acc


def _run_rollouts(engine: Engine, start: int, stop: int, deadline: Optional[float]) -> list:
    acc: list = []
    for r in range(start, stop):
        if deadline is not None and time.perf_counter() > deadline:
            break
        key, q = engine.rollout(rollout_rng(engine.cfg.seed, r))
        score_and_update(engine, key, q, acc)
    return acc


_WORKER_ENGINE: Optional[Engine] = None


def _worker(args):
    start, stop, deadline_in = args
    deadline = time.perf_counter() + deadline_in if deadline_in is not None else None
    return _run_rollouts(_WORKER_ENGINE, start, stop, deadline)


def _engine_for(engine, cfg, sets, vs, observations, actions, planes, statics) -> Engine:
    if engine is None:
        return Engine(sets, vs, observations, actions, cfg, planes, statics)
    return engine if engine.cfg is cfg else engine.derive(cfg)


def infer(sets: Sequence[HypothesisSet], vs=None, observations: Sequence[PredictedObservation] = (),
          actions: Sequence[PushAction] = (), cfg: Optional[InferenceConfig] = None,
          planes=SUPPORT_PLANES, statics: Sequence[ConvexMesh] = (), jobs: int = 1,
          engine: Optional[Engine] = None) -> PosteriorTable:
    """Estimate per-object posteriors with ``cfg.rollouts`` importance-weighted rollouts.

    With zero rollouts the result is the prior restricted to admissible models.
    ``jobs > 1`` splits the rollouts across forked processes; the merged table
    equals the serial one.
    """
    cfg = cfg or InferenceConfig()
    t0 = time.perf_counter()
    engine = _engine_for(engine, cfg, sets, vs, observations, actions, planes, statics)
    if cfg.rollouts == 0:
        table = engine.prior_table()
        table.runtime = time.perf_counter() - t0
        return table
    deadline = t0 + cfg.timeout if cfg.timeout is not None else None
    if jobs <= 1:
        samples = _run_rollouts(engine, 0, cfg.rollouts, deadline)
    else:
        samples = _parallel_rollouts(engine, cfg, jobs, deadline)
    if not any(lw[engine.ids[0]] > -math.inf for _, lw in samples) and samples:
        log.warning("every rollout received zero weight")
    table = engine.table_from_samples(samples, len(samples), time.perf_counter() - t0)
    for oid, e in table.ess.items():
        if e < 10:
            log.info("object %s: effective sample size %.1f", oid, e)
    return table


def _parallel_rollouts(engine: Engine, cfg: InferenceConfig, jobs: int, deadline) -> list:
    import multiprocessing as mp
    global _WORKER_ENGINE
    bounds = np.linspace(0, cfg.rollouts, jobs + 1).astype(int)
    remaining = None if deadline is None else max(deadline - time.perf_counter(), 0.0)
    _WORKER_ENGINE = engine
    try:
        with mp.get_context("fork").Pool(jobs) as pool:
            parts = pool.map(_worker, [(int(a), int(b), remaining) for a, b in zip(bounds[:-1], bounds[1:])])
    finally:
        _WORKER_ENGINE = None
    return [s for part in parts for s in part]


def exhaustive_posterior(sets: Sequence[HypothesisSet], vs=None,
                         observations: Sequence[PredictedObservation] = (),
                         actions: Sequence[PushAction] = (), cfg: Optional[InferenceConfig] = None,
                         planes=SUPPORT_PLANES, statics: Sequence[ConvexMesh] = (),
                         engine: Optional[Engine] = None, limit: int = EXHAUSTIVE_LIMIT) -> PosteriorTable:
    """Score every admissible joint model once and marginalize per object."""
    cfg = cfg or InferenceConfig()
    total = math.prod(len(hs) for hs in sets)
    if total > limit:
        raise TooLarge(f"{total} joint models exceed the limit of {limit}")
    t0 = time.perf_counter()
    engine = _engine_for(engine, cfg, sets, vs, observations, actions, planes, statics)
    scored = []
    for key in itertools.product(*[range(len(hs)) for hs in engine.sets]):
        s = engine.joint_log_score(key)
        if s > -math.inf:
            scored.append((key, s))
    if not scored:
        raise NoValidModels("every joint model violates the constraints")
    top = max(s for _, s in scored)
    probs = []
    for k in range(engine.n):
        cells = [[] for _ in engine.sets[k].models]
        for key, s in scored:
            cells[key[k]].append(math.exp(s - top))
        probs.append(np.array([math.fsum(c) for c in cells]))
    return PosteriorTable(list(engine.ids), _normalize_rows(probs), engine._signatures(),
                          engine._volumes(), len(scored), {}, time.perf_counter() - t0)


def select_map_models(p: PosteriorTable, sets: Sequence[HypothesisSet], rel_tol: float = 1e-12) -> JointSceneModel:
    """Per-object most probable model; near-ties go to the smaller volume."""
    choice = {}
    for hs in sets:
        row = p.row(hs.object_id)
        top = row.max()
        tied = [j for j in range(len(row)) if row[j] >= top - rel_tol * max(top, 1e-300)]
        choice[hs.object_id] = min(tied, key=lambda j: (hs.models[j].volume, j))
    return JointSceneModel.from_sets(sets, choice)
