"""Synthetic tabletop scenes with known ground truth, and a virtual depth sensor."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from shapely.affinity import translate as shp_translate
from shapely.geometry import Polygon

from ..geometry import (DEFAULT_RESOLUTION, FREE, SURFACE, UNKNOWN, ConvexMesh, VisibleSpace,
                        VoxelGrid, convex_hull, mesh_from_obj, mesh_to_obj)
from ..simulator import PushAction, RigidBody, World, box_mesh, replay_actions, settle
from ..simulator.render import Camera, PredictedObservation, render_depth

FAMILIES = ("box", "wedge", "cylinder", "book")
TABLE_COLOR = (0.55, 0.55, 0.55)
WALL_COLOR = (0.35, 0.25, 0.15)
PALETTE = [(0.85, 0.15, 0.15), (0.15, 0.55, 0.85), (0.95, 0.8, 0.1), (0.2, 0.75, 0.3),
           (0.6, 0.3, 0.8), (0.95, 0.5, 0.1), (0.1, 0.8, 0.8), (0.85, 0.4, 0.6),
           (0.5, 0.5, 0.1), (0.3, 0.3, 0.9)]


class UnstableScene(RuntimeError):
    pass


@dataclass
class SceneObject:
    mesh: ConvexMesh
    color: tuple
    family: str = "box"


@dataclass
class SyntheticScene:
    """Ground-truth objects resting on a table (plane z = 0) seen by one camera."""

    objects: list
    camera: Camera
    actions: list = field(default_factory=list)
    statics: list = field(default_factory=list)
    seed: int = 0
    planes: list = field(default_factory=lambda: [((0.0, 0.0, 1.0), 0.0)])

    def world(self, density: float = 500.0, friction: float = 0.5,
              densities: Optional[Sequence[float]] = None,
              frictions: Optional[Sequence[float]] = None) -> World:
        bodies = []
        for i, o in enumerate(self.objects):
            d = densities[i] if densities is not None else density
            f = frictions[i] if frictions is not None else friction
            bodies.append(RigidBody.from_mesh(i, o.mesh, density=d, friction=f))
        for k, m in enumerate(self.statics):
            bodies.append(RigidBody.from_mesh(1000 + k, m, static=True, friction=friction))
        return World(bodies, planes=self.planes)

    @property
    def workspace(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned region where hidden space is tracked (table top upward)."""
        if not self.objects:
            return np.array([-0.2, -0.2, 0.0]), np.array([0.2, 0.2, 0.25])
        lo = np.min([o.mesh.bounds[0] for o in self.objects], axis=0) - 0.12
        hi = np.max([o.mesh.bounds[1] for o in self.objects], axis=0) + 0.12
        lo[2] = 0.0
        hi[2] = max(hi[2], 0.25)
        return lo, hi

    # -- persistence ----------------------------------------------------------
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        objs = []
        for i, o in enumerate(self.objects):
            name = f"object_{i}.obj"
            (d / name).write_text(mesh_to_obj(o.mesh))
            objs.append({"obj": name, "color": list(o.color), "family": o.family,
                         "pose": {"rotation": [0.0, 0.0, 0.0, 1.0], "translation": [0.0, 0.0, 0.0]}})
        statics = []
        for k, m in enumerate(self.statics):
            name = f"static_{k}.obj"
            (d / name).write_text(mesh_to_obj(m))
            statics.append({"obj": name})
        doc = {"seed": self.seed, "objects": objs, "statics": statics,
               "planes": [{"normal": list(n), "offset": o} for n, o in self.planes],
               "camera": self.camera.to_dict(),
               "actions": [a.to_dict() for a in self.actions]}
        path = d / "scene.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        path = Path(path)
        if path.is_dir():
            path = path / "scene.json"
        doc = json.loads(path.read_text())
        base = path.parent
        objs = [SceneObject(mesh_from_obj((base / o["obj"]).read_text()), tuple(o["color"]),
                            o.get("family", "box")) for o in doc["objects"]]
        statics = [mesh_from_obj((base / s["obj"]).read_text()) for s in doc.get("statics", [])]
        planes = [(tuple(p["normal"]), p["offset"]) for p in doc.get("planes", [])]
        return cls(objs, Camera.from_dict(doc["camera"]),
                   [PushAction.from_dict(a) for a in doc.get("actions", [])],
                   statics, doc.get("seed", 0), planes or [((0.0, 0.0, 1.0), 0.0)])

    def digest(self) -> str:
        h = hashlib.sha256()
        for o in self.objects:
            h.update(np.round(o.mesh.vertices, 9).tobytes())
        h.update(json.dumps([a.to_dict() for a in self.actions], sort_keys=True).encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Shape families
# ---------------------------------------------------------------------------

def _prism(profile_xy: np.ndarray, height: float) -> np.ndarray:
    bottom = np.column_stack([profile_xy, np.zeros(len(profile_xy))])
    top = np.column_stack([profile_xy, np.full(len(profile_xy), height)])
    return np.vstack([bottom, top])


def sample_shape(family: str, rng: np.random.Generator) -> np.ndarray:
    """Vertices of a shape centered on the z axis with its base on z = 0."""
    if family == "box":
        sx, sy = rng.uniform(0.04, 0.09, size=2)
        sz = rng.uniform(0.04, 0.11)
        xy = np.array([[-sx, -sy], [sx, -sy], [sx, sy], [-sx, sy]]) / 2
        return _prism(xy, sz)
    if family == "book":
        sx, sy = rng.uniform(0.09, 0.15), rng.uniform(0.07, 0.11)
        sz = rng.uniform(0.02, 0.035)
        xy = np.array([[-sx, -sy], [sx, -sy], [sx, sy], [-sx, sy]]) / 2
        return _prism(xy, sz)
    if family == "cylinder":
        r = rng.uniform(0.025, 0.04)
        h = rng.uniform(0.05, 0.1)
        a = np.arange(12) * 2 * np.pi / 12
        return _prism(np.column_stack([r * np.cos(a), r * np.sin(a)]), h)
    if family == "wedge":
        w, l = rng.uniform(0.05, 0.09), rng.uniform(0.04, 0.08)
        h = rng.uniform(0.03, 0.06)
        # right-triangle cross-section in x/z, extruded along y
        pts = []
        for y in (-l / 2, l / 2):
            pts += [[-w / 2, y, 0.0], [w / 2, y, 0.0], [-w / 2, y, h]]
        return np.array(pts)
    raise ValueError(f"unknown shape family {family!r}")


def _footprint(verts: np.ndarray) -> Polygon:
    return Polygon(verts[:, :2]).convex_hull


def default_camera(width: int = 128, height: int = 128) -> Camera:
    return Camera.look_at((-0.42, -0.12, 0.36), (0.0, 0.0, 0.03), width=width, height=height,
                          fov_deg=45.0)


def generate_scene(count: int = 3, families: Sequence[str] = FAMILIES, tight: bool = False,
                   seed: int = 0, pushes: int = 0, container: bool = False,
                   camera: Optional[Camera] = None, attempts: int = 20) -> SyntheticScene:
    """Sample shapes, place them on the table, settle, and record ground truth."""
    if not 1 <= count <= 10:
        raise ValueError("object count must be in [1, 10]")
    for fam in families:
        if fam not in FAMILIES:
            raise ValueError(f"unknown shape family {fam!r}")
    rng = np.random.default_rng(seed)
    camera = camera or default_camera()
    for _ in range(attempts):
        scene = _try_scene(count, list(families), tight, rng, pushes, container, camera, seed)
        if scene is not None:
            return scene
    raise UnstableScene(f"no stable arrangement after {attempts} attempts")


def _place(polys: list, shape_poly: Polygon, tight: bool, rng, half: float):
    for _ in range(200):
        if tight and polys:
            anchor = polys[rng.integers(len(polys))]
            ang = rng.uniform(0, 2 * np.pi)
            u = np.array([np.cos(ang), np.sin(ang)])
            c = np.array(anchor.centroid.coords[0])
            lo, hi = 0.0, 0.4
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                cand = shp_translate(shape_poly, *(c + u * mid))
                if cand.intersects(anchor):
                    lo = mid
                else:
                    hi = mid
            pos = c + u * (hi + 0.001)
        else:
            pos = rng.uniform(-half, half, size=2)
        cand = shp_translate(shape_poly, *pos)
        if np.abs(pos).max() > half + 0.05:
            continue
        gap = 0.0002 if tight else 0.015
        if all(cand.distance(p) >= gap for p in polys):
            return pos, cand
    return None, None


def _try_scene(count, families, tight, rng, pushes, container, camera, seed):
    half = 0.07 if tight else 0.12
    polys, objs = [], []
    for i in range(count):
        fam = families[rng.integers(len(families))]
        verts = sample_shape(fam, rng)
        yaw = rng.uniform(0, np.pi)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        verts = verts @ rot.T
        pos, poly = _place(polys, _footprint(verts), tight, rng, half)
        if pos is None:
            return None
        verts = verts + np.array([pos[0], pos[1], 0.0])
        polys.append(poly)
        objs.append(SceneObject(convex_hull(verts), PALETTE[i % len(PALETTE)], fam))
    statics = []
    if container:
        lo = np.min([o.mesh.bounds[0] for o in objs], axis=0)
        hi = np.max([o.mesh.bounds[1] for o in objs], axis=0)
        # a drawer front between the camera and the objects
        xs = lo[0] - 0.02
        front_h = 0.6 * float(np.median([o.mesh.bounds[1][2] for o in objs]))
        statics.append(box_mesh((0.01, hi[1] - lo[1] + 0.1, front_h),
                                (xs - 0.005, 0.5 * (lo[1] + hi[1]), front_h / 2)))
    scene = SyntheticScene(objs, camera, [], statics, seed)
    world = scene.world()
    try:
        settle(world, t_max=2.0)
        _, extra = settle(world, t_max=1.0)
    except Exception:
        return None
    if max(extra[i] for i in range(count)) > 0.002:
        return None
    objs = [SceneObject(world.body(i).world_mesh(), o.color, o.family) for i, o in enumerate(objs)]
    if any(o.mesh.bounds[0][2] < -0.002 for o in objs):
        return None
    scene = SyntheticScene(objs, camera, [], statics, seed)
    scene.actions = [a for a in (_sample_push(scene, rng) for _ in range(pushes)) if a is not None]
    if len(scene.actions) < pushes:
        return None
    return scene


def _sample_push(scene: SyntheticScene, rng, duration: float = 1.0, speed: float = 0.05,
                 radius: float = 0.01) -> Optional[PushAction]:
    """A horizontal push toward the centroid of a random object, starting clear of everything."""
    meshes = [o.mesh for o in scene.objects] + list(scene.statics)
    for _ in range(50):
        k = int(rng.integers(len(scene.objects)))
        m = scene.objects[k].mesh
        c = m.centroid
        ang = rng.uniform(0, 2 * np.pi)
        d = np.array([np.cos(ang), np.sin(ang), 0.0])
        proj = (m.vertices - c) @ d
        height = min(0.5 * (m.bounds[1][2] - m.bounds[0][2]), 0.02)
        start = c - d * (-proj.min() + radius + 0.01)
        start[2] = max(height, radius + 0.002)
        path = [start + d * speed * t for t in np.linspace(0, 0.2, 5)]
        clear = all(mm.signed_distance_bound(p[None, :])[0] > radius + 0.003
                    for mm in meshes for p in path if mm is not m)
        clear = clear and m.signed_distance_bound(start[None, :])[0] > radius + 0.003
        if clear:
            return PushAction(start, d, duration, speed, radius)
    return None


# ---------------------------------------------------------------------------
# Virtual sensor
# ---------------------------------------------------------------------------

@dataclass
class Capture:
    points: np.ndarray
    colors: np.ndarray
    labels: np.ndarray        # ground-truth object index per point, -1 for static geometry
    observation: PredictedObservation
    visible_space: VisibleSpace


def capture(scene: SyntheticScene, noise_sigma: float = 0.002, seed: int = 0,
            world: Optional[World] = None, resolution: float = DEFAULT_RESOLUTION,
            color_noise: float = 0.02, frame_index: int = 0) -> Capture:
    """Render a depth frame, back-project it to a colored cloud, and carve visible space."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    world = world or scene.world()
    cam = scene.camera
    obs = render_depth(world, cam)
    depth = obs.depth.copy()
    hit = depth < cam.far
    if noise_sigma > 0:
        depth[hit] += rng.normal(0.0, noise_sigma, size=int(hit.sum()))
    noisy = PredictedObservation(depth, obs.object_mask.copy(), cam)
    pts, pix = cam.back_project(depth)
    labels = obs.object_mask.ravel()[pix]
    colors = np.empty((len(pts), 3))
    for i, o in enumerate(scene.objects):
        colors[labels == i] = o.color
    colors[labels < 0] = TABLE_COLOR
    for k, m in enumerate(scene.statics):
        inside = m.signed_distance_bound(pts) < 0.003
        colors[inside & (labels < 0)] = WALL_COLOR
    if color_noise > 0:
        colors = np.clip(colors + rng.normal(0, color_noise, colors.shape), 0, 1)
    labels = np.where(labels >= 0, labels, -1)
    lo, hi = scene.workspace
    vs = carve_visible_space(noisy, pts, lo, hi, resolution, slack=2 * noise_sigma,
                             frame_index=frame_index)
    return Capture(pts, colors, labels, noisy, vs)


def carve_visible_space(obs: PredictedObservation, points: np.ndarray, lo, hi,
                        resolution: float = DEFAULT_RESOLUTION, slack: float = 0.0,
                        frame_index: int = 0) -> VisibleSpace:
    """Label cells in front of the observed surface FREE, cells holding points SURFACE,
    everything else (behind surfaces, outside the view) UNKNOWN.

    A cell is FREE only when its whole extent lies in front of the minimum depth
    over the neighboring pixels, which keeps silhouettes conservative.
    """
    grid = VoxelGrid.covering(lo, hi, resolution)
    grid.cells[:] = UNKNOWN
    cam = obs.camera
    idx = np.indices(grid.dims).reshape(3, -1).T
    centers = grid.centers(idx)
    uvz = cam.project(centers)
    u = np.round(uvz[:, 0]).astype(int)
    v = np.round(uvz[:, 1]).astype(int)
    z = uvz[:, 2]
    in_view = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height) & (z > cam.near)
    dmin = ndimage.minimum_filter(obs.depth, size=3, mode="nearest")
    half_diag = 0.5 * math.sqrt(3.0) * resolution
    free = np.zeros(len(idx), dtype=bool)
    iv = np.flatnonzero(in_view)
    free[iv] = z[iv] + half_diag + slack < dmin[v[iv], u[iv]]
    cells = grid.cells.reshape(-1)
    cells[free] = FREE
    gi, ok = grid.index(points)
    gi = gi[ok]
    grid.cells[gi[:, 0], gi[:, 1], gi[:, 2]] = SURFACE
    return VisibleSpace(frame_index, grid)


def observe_sequence(scene: SyntheticScene, world: Optional[World] = None, stride: int = 1,
                     settle_after: float = 0.5) -> list:
    """Ground-truth frames: the initial view followed by the frames of the push replay."""
    from ..simulator.render import render_trace
    world = world or scene.world()
    frames = [render_depth(world, scene.camera)]
    if scene.actions:
        trace = replay_actions(world, scene.actions, settle_after=settle_after)
        frames += render_trace(world, trace, scene.camera, stride)
    return frames


def ground_truth_occupancy(scene: SyntheticScene, frame: VoxelGrid) -> list:
    from ..geometry import voxelize
    return [voxelize(o.mesh, frame.resolution, frame) for o in scene.objects]


def in_contact(scene: SyntheticScene, tol: float = 0.002) -> list:
    """Pairs of object indices whose hulls come within ``tol`` of each other."""
    pairs = []
    for i in range(len(scene.objects)):
        for j in range(i + 1, len(scene.objects)):
            a, b = scene.objects[i].mesh, scene.objects[j].mesh
            # vertex-to-hull distance bound in both directions
            d = min(np.min(b.signed_distance_bound(a.vertices)),
                    np.min(a.signed_distance_bound(b.vertices)))
            if d <= tol:
                pairs.append((i, j))
    return pairs
