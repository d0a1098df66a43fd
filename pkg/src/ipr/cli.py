"""Command line front door: gen, segment, hypothesize, infer, eval.

Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numerical failure.
Settings resolve as flag, then environment variable ``IPR_<NAME>``, then the
built-in default.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger("ipr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
RUN_MANIFEST = "run_manifest.json"  # a model bundle already owns manifest.json


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def content_hash(path) -> str:
    """Git blob hash of a file, or of every file below a directory."""
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha1()
        for f in sorted(q for q in p.rglob("*") if q.is_file() and q.name != RUN_MANIFEST):
            h.update(str(f.relative_to(p)).encode())
            h.update(content_hash(f).encode())
        return h.hexdigest()
    data = p.read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str))
        return path


def _manifest_path(out: Path) -> Path:
    return out / RUN_MANIFEST if out.is_dir() else out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# Settings
# ---------------------------------------------------------------------------

def _setting(args, name: str, default, cast=str):
    value = getattr(args, name, None)
    if value is not None:
        return value
    env = os.environ.get("IPR_" + name.upper())
    if env is not None:
        try:
            return cast(env)
        except ValueError as exc:
            raise UsageError(f"bad value for IPR_{name.upper()}: {env!r}") from exc
    return default


def _flag(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise ValueError(text)


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> RunManifest:
    from .harness.scenes import FAMILIES, generate_scene
    count = _setting(args, "count", 3, int)
    seed = _setting(args, "seed", 0, int)
    shapes = _setting(args, "shapes", ",".join(FAMILIES))
    fams = [s.strip() for s in shapes.split(",") if s.strip()]
    if not 1 <= count <= 10:
        raise UsageError("--count must be in [1, 10]")
    bad = [f for f in fams if f not in FAMILIES]
    if bad or not fams:
        raise UsageError(f"unknown shape families: {bad}")
    pushes = _setting(args, "pushes", 1, int)
    scene = generate_scene(count, fams, bool(args.tight), seed, pushes, bool(args.container))
    out = Path(args.out)
    path = scene.save(out)
    cfg = {"count": count, "shapes": fams, "tight": bool(args.tight), "pushes": pushes,
           "container": bool(args.container)}
    return RunManifest("gen", cfg, seed, {}, {str(path): content_hash(path)})


def cmd_segment(args) -> RunManifest:
    from .segmentation import SegmentationConfig, read_ply, segment, segmentation_to_json
    seed = _setting(args, "seed", 0, int)
    cloud_path = Path(args.cloud)
    cloud = read_ply(cloud_path)
    if len(cloud) == 0:
        raise UsageError("the point cloud is empty")
    cfg = SegmentationConfig(seed=seed)
    bw = _setting(args, "bandwidths", None, str)
    if bw:
        vals = _floats(bw)
        if not 1 <= len(vals) <= 3 or min(vals) <= 0:
            raise UsageError("--bandwidths takes spatial[,color[,normal]] positive values")
        names = ("spatial_bandwidth", "color_bandwidth", "normal_bandwidth")
        for n, v in zip(names, vals):
            setattr(cfg, n, v)
    cam = _floats(args.camera) if args.camera else [0.0, 0.0, 1.0]
    planes = [((0.0, 0.0, 1.0), 0.0)] if not args.no_table else None
    objects = segment(cloud, np.array(cam), known_planes=planes, config=cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(segmentation_to_json(objects))
    return RunManifest("segment", {"bandwidths": [cfg.spatial_bandwidth, cfg.color_bandwidth,
                                                  cfg.normal_bandwidth], "camera": cam}, seed,
                       {str(cloud_path): content_hash(cloud_path)}, {str(out): content_hash(out)})


def _load_scene(path):
    from .harness.scenes import SyntheticScene
    p = Path(path)
    if not (p / "scene.json").exists() and not p.is_file():
        raise FileNotFoundError(f"no scene at {p}")
    return SyntheticScene.load(p)


def cmd_hypothesize(args) -> RunManifest:
    from .harness.benchmark import build_problem
    from .hypothesis import write_bundle
    seed = _setting(args, "seed", 0, int)
    m = _setting(args, "models_per_object", 20, int)
    if m < 1:
        raise UsageError("--models-per-object must be >= 1")
    scene = _load_scene(args.scene)
    problem = build_problem(scene, m=m, seed=seed)
    out = Path(args.out)
    write_bundle(problem.sets, out)
    return RunManifest("hypothesize", {"models_per_object": m}, seed,
                       {str(args.scene): content_hash(args.scene)}, {str(out): content_hash(out)})


def _inference_config(args):
    from .inference import InferenceConfig, PriorSpec
    rollouts = _setting(args, "rollouts", 500, int)
    if rollouts < 0:
        raise UsageError("--rollouts must be >= 0")
    prior = _setting(args, "prior", "uniform")
    if prior not in ("uniform", "size"):
        raise UsageError("--prior must be uniform or size")
    try:
        actions = _flag(str(_setting(args, "actions", "on")))
    except ValueError as exc:
        raise UsageError("--actions must be on or off") from exc
    alpha = _setting(args, "alpha", 10.0, float)
    alpha_explore = _setting(args, "alpha_explore", 50.0, float)
    if alpha <= 0 or alpha_explore <= 0:
        raise UsageError("alphas must be positive")
    return InferenceConfig(rollouts=rollouts, alpha_likelihood=alpha, alpha_explore=alpha_explore,
                           timeout=_setting(args, "timeout", None, float),
                           seed=_setting(args, "seed", 0, int), simulate_actions=actions,
                           prior=PriorSpec(prior), frame_stride=_setting(args, "frame_stride", 1, int))


def cmd_infer(args) -> RunManifest:
    from .geometry import mesh_to_obj
    from .harness.benchmark import build_problem
    from .inference import infer, select_map_models
    cfg = _inference_config(args)
    m = _setting(args, "models_per_object", 20, int)
    jobs = _setting(args, "jobs", 1, int)
    if m < 1 or jobs < 1:
        raise UsageError("--models-per-object and --jobs must be >= 1")
    scene = _load_scene(args.scene)
    problem = build_problem(scene, m=m, seed=cfg.seed, frame_stride=cfg.frame_stride)
    if not problem.sets:
        raise UsageError("segmentation found no objects in the scene")
    table = infer(problem.sets, cfg=cfg, engine=problem.engine(cfg), jobs=jobs)
    for oid, e in table.ess.items():
        if cfg.rollouts > 0 and e < 10:
            log.warning("object %s: effective sample size %.1f < 10; estimates are high-variance", oid, e)
    x = select_map_models(table, problem.sets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "posterior.json").write_text(table.to_json())
    for mdl in x.models:
        (out / f"map_object{mdl.object_id}.obj").write_text(mesh_to_obj(mdl.hull))
    conf = {k: v for k, v in asdict(cfg).items()}
    conf["models_per_object"] = m
    conf["jobs"] = jobs
    return RunManifest("infer", conf, cfg.seed, {str(args.scene): content_hash(args.scene)},
                       {str(p): content_hash(p) for p in sorted(out.glob("*")) if p.name != RUN_MANIFEST})


def cmd_eval(args) -> RunManifest:
    from .harness.benchmark import VARIANTS, run_benchmark
    variants = [v.strip() for v in _setting(args, "variants", ",".join(VARIANTS)).split(",") if v.strip()]
    if not variants:
        raise UsageError("--variants needs at least one variant")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variants: {bad}")
    cfg = _inference_config(args)
    m = _setting(args, "models_per_object", 20, int)
    jobs = _setting(args, "jobs", 1, int)
    root = Path(args.scenes)
    if not root.is_dir():
        raise FileNotFoundError(f"no scene directory at {root}")
    dirs = sorted(p.parent for p in root.rglob("scene.json"))
    if not dirs:
        raise FileNotFoundError(f"no scene.json below {root}")
    scenes = [_load_scene(d) for d in dirs]
    names = [str(d.relative_to(root)) if d != root else d.name for d in dirs]
    report = run_benchmark(scenes, variants, cfg, m=m, seed=cfg.seed, frame_stride=cfg.frame_stride,
                           names=names, jobs=jobs)
    for name, err in report.failures:
        log.warning("scene %s failed: %s", name, err)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_csv())
    return RunManifest("eval", {"variants": variants, "models_per_object": m, "jobs": jobs,
                                **asdict(cfg)}, cfg.seed,
                       {str(d): content_hash(d) for d in dirs}, {str(out): content_hash(out)})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_inference_flags(p):
    p.add_argument("--rollouts", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--alpha", type=float, help="likelihood weight (1/m)")
    p.add_argument("--alpha-explore", dest="alpha_explore", type=float, help="exploration weight (1/m)")
    p.add_argument("--prior", choices=["uniform", "size"])
    p.add_argument("--actions", choices=["on", "off"])
    p.add_argument("--models-per-object", dest="models_per_object", type=int)
    p.add_argument("--frame-stride", dest="frame_stride", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ipr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene")
    g.add_argument("--count", type=int)
    g.add_argument("--shapes", help="comma separated families")
    g.add_argument("--tight", action="store_true")
    g.add_argument("--container", action="store_true")
    g.add_argument("--pushes", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("segment", help="segment a colored point cloud (ASCII PLY)")
    s.add_argument("--cloud", required=True)
    s.add_argument("--bandwidths", help="spatial[,color[,normal]]")
    s.add_argument("--camera", help="camera position x,y,z")
    s.add_argument("--no-table", dest="no_table", action="store_true", help="do not remove the z=0 plane")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    h = sub.add_parser("hypothesize", help="write the model bundle of a scene")
    h.add_argument("--scene", required=True)
    h.add_argument("--models-per-object", dest="models_per_object", type=int)
    h.add_argument("--seed", type=int)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_hypothesize)

    i = sub.add_parser("infer", help="posterior over models and MAP meshes")
    i.add_argument("--scene", required=True)
    _add_inference_flags(i)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="benchmark variants over a directory of scenes")
    e.add_argument("--scenes", required=True)
    e.add_argument("--variants", help="comma separated variant names")
    _add_inference_flags(e)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return ap


def main(argv: Optional[list] = None) -> int:
    from .geometry import GeometryError
    from .inference import NoValidModels, TooLarge
    from .simulator.world import SimulationError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        manifest = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SimulationError, NoValidModels, TooLarge, GeometryError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest.wall_clock = time.perf_counter() - start
    out = Path(args.out)
    manifest.write(_manifest_path(out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
