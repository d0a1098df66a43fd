"""End-to-end pipeline per scene, the variant benchmark, and the mechanical robustness study."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..geometry import VoxelGrid, bounding_points, voxelize
from ..hypothesis import HiddenSpace, HypothesisConfig, prepare_partial, sample_model_set
from ..inference import Engine, InferenceConfig, PriorSpec, infer, select_map_models
from ..segmentation import PointCloud, SegmentationConfig, segment
from ..simulator.render import STATIC, PredictedObservation
from ..simulator.world import replay_actions
from .metrics import overlap
from .scenes import Capture, SyntheticScene, capture, observe_sequence

log = logging.getLogger(__name__)

VARIANTS = ("CollisionChecker", "IPR+uniform", "IPR+size", "IPR+action+uniform", "IPR+action+size")
CSV_COLUMNS = ["variant", "scene", "object", "IoU", "precision", "recall", "F1", "runtime_s"]


def variant_config(name: str, base: Optional[InferenceConfig] = None) -> InferenceConfig:
    """Inference settings of a named variant on top of ``base``."""
    base = base or InferenceConfig()
    if name == "CollisionChecker":
        return replace(base, rollouts=0, prior=PriorSpec("uniform"))
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}")
    kind = "size" if name.endswith("size") else "uniform"
    return replace(base, simulate_actions="+action" in name, prior=PriorSpec(kind, base.prior.beta))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    """Everything inference needs for one scene, plus the link back to ground truth."""

    scene: SyntheticScene
    capture: Capture
    sets: list
    hidden: HiddenSpace
    observations: list
    truth_index: dict          # segmented object id -> ground-truth object index
    setup_time: float = 0.0
    _engine: Optional[Engine] = field(default=None, repr=False)

    @property
    def actions(self) -> list:
        return list(self.scene.actions)

    def engine(self, cfg: InferenceConfig) -> Engine:
        """Engine for ``cfg``; variants of one problem share simulation caches."""
        if self._engine is None:
            self._engine = Engine(self.sets, self.hidden, self.observations, self.actions, cfg,
                                  self.scene.planes, self.scene.statics)
            return self._engine
        return self._engine.derive(cfg)


def relabel_observation(obs: PredictedObservation, mapping: dict) -> PredictedObservation:
    """Rewrite ground-truth body ids in the mask to segmented ids; unmatched bodies become static."""
    mask = obs.object_mask
    out = np.where(mask >= 0, STATIC, mask)
    for gt, seg in mapping.items():
        out[mask == gt] = seg
    return PredictedObservation(obs.depth, out, obs.camera)


def build_problem(scene: SyntheticScene, m: int = 20, seed: int = 0, noise_sigma: float = 0.002,
                  frame_stride: int = 3, hypothesis: Optional[HypothesisConfig] = None,
                  segmentation: Optional[SegmentationConfig] = None,
                  total_timeout: Optional[float] = None) -> Problem:
    """Capture, segment and hypothesize; observed frames come from the ground-truth replay."""
    t0 = time.perf_counter()
    cap = capture(scene, noise_sigma=noise_sigma, seed=seed)
    seg_cfg = segmentation or SegmentationConfig(seed=seed)
    partials = segment(PointCloud(cap.points, cap.colors), scene.camera.position,
                       known_planes=scene.planes, known_meshes=scene.statics, config=seg_cfg)
    partials = [prepare_partial(p) for p in partials]
    hyp_cfg = hypothesis or HypothesisConfig()
    hidden = HiddenSpace(cap.visible_space, partials, hyp_cfg.tolerance_voxels, scene.statics)
    sets = [sample_model_set(p, m=m, seed=seed, config=hyp_cfg, hidden=hidden,
                             total_timeout=total_timeout) for p in partials]
    truth = {}
    for p in partials:
        rows = np.concatenate([np.asarray(ix, dtype=int) for ix in p.facet_indices])
        labels = cap.labels[rows]
        labels = labels[labels >= 0]
        if len(labels):
            truth[p.id] = Counter(labels.tolist()).most_common(1)[0][0]
    # each ground-truth body is drawn as the segment holding most of its points
    owner: dict = {}
    for p in partials:
        if p.id not in truth:
            continue
        rows = np.concatenate([np.asarray(ix, dtype=int) for ix in p.facet_indices])
        count = int((cap.labels[rows] == truth[p.id]).sum())
        g = truth[p.id]
        if g not in owner or count > owner[g][1]:
            owner[g] = (p.id, count)
    mapping = {g: seg for g, (seg, _) in owner.items()}
    frames = observe_sequence(scene, stride=frame_stride)
    observations = [relabel_observation(f, mapping) for f in frames]
    return Problem(scene, cap, sets, hidden, observations, truth, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add(self, variant, scene, obj, scores, runtime):
        self.rows.append({"variant": variant, "scene": scene, "object": obj, "IoU": scores.iou,
                          "precision": scores.precision, "recall": scores.recall, "F1": scores.f1,
                          "runtime_s": runtime})

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.rows + other.rows, self.failures + other.failures)

    def sorted(self) -> "EvalReport":
        order = {v: k for k, v in enumerate(VARIANTS)}
        key = lambda r: (order.get(r["variant"], 99), str(r["scene"]), r["object"] == "scene", str(r["object"]))
        return EvalReport(sorted(self.rows, key=key), list(self.failures))

    def mean(self, variant: str, metric: str = "IoU", level: str = "object") -> float:
        vals = [r[metric] for r in self.rows if r["variant"] == variant and
                ((r["object"] == "scene") == (level == "scene"))]
        return float(np.mean(vals)) if vals else math.nan

    def to_csv(self, runtime: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.sorted().rows:
            w.writerow([r["variant"], r["scene"], r["object"]] +
                       [f"{r[k]:.6f}" for k in ("IoU", "precision", "recall", "F1")] +
                       [f"{r['runtime_s']:.3f}" if runtime else "0"])
        return buf.getvalue()


def _score_frame(meshes: list, resolution: float) -> VoxelGrid:
    lo, hi = bounding_points(meshes)
    return VoxelGrid.covering(lo - 2 * resolution, hi + 2 * resolution, resolution, dtype=bool)


def evaluate_models(problem: Problem, choice_models: dict, resolution: float = 0.005) -> tuple[dict, object]:
    """Per ground-truth object and whole-scene overlap of the chosen model hulls."""
    truth_meshes = [o.mesh for o in problem.scene.objects]
    pred_meshes = {oid: m.hull for oid, m in choice_models.items()}
    frame = _score_frame(truth_meshes + list(pred_meshes.values()), resolution)
    empty = frame.like(bool)
    truth_vox = [voxelize(mh, resolution, frame) for mh in truth_meshes]
    pred_by_truth = {g: empty.like(bool) for g in range(len(truth_meshes))}
    scene_pred = empty.like(bool)
    for oid, mh in pred_meshes.items():
        v = voxelize(mh, resolution, frame)
        scene_pred.cells |= v.cells
        g = problem.truth_index.get(oid)
        if g is not None:
            pred_by_truth[g].cells |= v.cells
    scene_truth = empty.like(bool)
    for v in truth_vox:
        scene_truth.cells |= v.cells
    per_object = {g: overlap(pred_by_truth[g], truth_vox[g]) for g in range(len(truth_meshes))}
    return per_object, overlap(scene_pred, scene_truth)


def run_variant(problem: Problem, variant: str, cfg: Optional[InferenceConfig] = None,
                jobs: int = 1):
    """MAP models of one variant and the runtime of its inference."""
    vcfg = variant_config(variant, cfg)
    t0 = time.perf_counter()
    table = infer(problem.sets, cfg=vcfg, engine=problem.engine(vcfg), jobs=jobs)
    x = select_map_models(table, problem.sets)
    return x, table, time.perf_counter() - t0


def run_benchmark(scenes: Sequence[SyntheticScene], variants: Sequence[str] = VARIANTS,
                  cfg: Optional[InferenceConfig] = None, m: int = 20, seed: int = 0,
                  frame_stride: int = 3, names: Optional[Sequence[str]] = None,
                  jobs: int = 1, hypothesis: Optional[HypothesisConfig] = None) -> EvalReport:
    """Full pipeline for every scene and variant; scene failures are recorded, not raised."""
    if not scenes:
        raise ValueError("need at least one scene")
    if not variants:
        raise ValueError("need at least one variant")
    for v in variants:
        variant_config(v)
    names = list(names) if names is not None else [f"scene{k:02d}" for k in range(len(scenes))]
    tasks = [(sc, nm, list(variants), cfg, m, seed, frame_stride, hypothesis) for sc, nm in zip(scenes, names)]
    if jobs > 1 and len(tasks) > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs) as pool:
            parts = pool.map(_scene_task, tasks)
    else:
        parts = [_scene_task(t) for t in tasks]
    report = EvalReport()
    for p in parts:
        report = report.merge(p)
    return report.sorted()


def _scene_task(args) -> EvalReport:
    scene, name, variants, cfg, m, seed, frame_stride, hypothesis = args
    report = EvalReport()
    base = replace(cfg or InferenceConfig(), frame_stride=frame_stride)
    try:
        problem = build_problem(scene, m=m, seed=seed, frame_stride=frame_stride, hypothesis=hypothesis)
        if not problem.sets:
            raise RuntimeError("segmentation found no objects")
        for v in variants:
            x, _, runtime = run_variant(problem, v, base)
            per_object, whole = evaluate_models(problem, {mm.object_id: mm for mm in x.models})
            for g, sc in per_object.items():
                report.add(v, name, g, sc, runtime)
            report.add(v, name, "scene", whole, runtime)
    except Exception as exc:  # reported per scene, the suite goes on
        log.warning("scene %s failed: %s", name, exc)
        report.failures.append((name, repr(exc)))
    return report


# ---------------------------------------------------------------------------
# Mechanical robustness
# ---------------------------------------------------------------------------

DENSITY_RANGE = (100.0, 2000.0)
FRICTION_RANGE = (0.2, 0.9)


def mechanical_spread(scene: SyntheticScene, samples: int = 100, seed: int = 0,
                      density_range=DENSITY_RANGE, friction_range=FRICTION_RANGE) -> np.ndarray:
    """Per-object standard deviation (meters) of final positions after the scene's pushes,
    over random per-object densities and frictions."""
    rng = np.random.default_rng(seed)
    n = len(scene.objects)
    finals = np.zeros((samples, n, 3))
    for s in range(samples):
        dens = rng.uniform(*density_range, size=n)
        fric = rng.uniform(*friction_range, size=n)
        w = scene.world(densities=dens, frictions=fric)
        replay_actions(w, scene.actions)
        finals[s] = [w.body(i).pose.translation for i in range(n)]
    return np.sqrt(finals.var(axis=0).sum(axis=1))
