"""Rigid bodies, worlds and the settle / push-replay drivers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import ConvexMesh, Pose, mass_properties, simplify_hull, unique_planes
from . import _core

DEFAULT_DENSITY = 500.0
DEFAULT_FRICTION = 0.5
DEFAULT_DT = 1.0 / 240.0
OUTPUT_RATE = 30.0
EDGE_SAMPLE_SPACING = 0.015
BOUNDING_REGION = 10.0
COLLISION_ANGLE_TOL = np.deg2rad(10.0)
COLLISION_MIN_AREA = 0.01


class SimulationError(Exception):
    pass


class Diverged(SimulationError):
    """A body left the bounding region: the joint model is physically absurd."""


class BodyShape:
    """Collision and mass data of one convex hull, expressed about its center of mass.

    Shapes are immutable and shared by every body built from the same hull, so
    the simplification and sampling cost is paid once per model.
    """

    def __init__(self, mesh: ConvexMesh, simplify: bool = True):
        sim = simplify_hull(mesh, COLLISION_ANGLE_TOL, COLLISION_MIN_AREA) if simplify else mesh
        _, com, inertia = mass_properties(sim, 1.0)
        self.world_mesh = mesh
        self.center = com
        self.local = ConvexMesh(sim.vertices - com, sim.faces, sim.face_normals, sim.volume)
        self.volume = sim.volume
        self.unit_inertia = inertia
        fn, fo = unique_planes(self.local.face_normals, self.local.plane_offsets)
        self.face_normals = np.ascontiguousarray(fn)
        self.face_offsets = np.ascontiguousarray(fo)
        self.samples = _edge_samples(self.local, EDGE_SAMPLE_SPACING)
        self.radius = float(np.linalg.norm(self.local.vertices, axis=1).max())


def _edge_samples(mesh: ConvexMesh, spacing: float) -> np.ndarray:
    """Hull vertices plus points along the polygon edges (triangle diagonals skipped)."""
    pts = [mesh.vertices]
    v = mesh.vertices
    owners: dict = {}
    for fi, tri in enumerate(mesh.faces):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owners.setdefault((min(a, b), max(a, b)), []).append(fi)
    for (i, j), fl in owners.items():
        if len(fl) == 2 and mesh.face_normals[fl[0]] @ mesh.face_normals[fl[1]] > 1 - 1e-9:
            continue
        length = np.linalg.norm(v[j] - v[i])
        k = int(length // spacing)
        if k >= 1:
            t = (np.arange(1, k + 1) / (k + 1))[:, None]
            pts.append(v[i] + t * (v[j] - v[i]))
    return np.ascontiguousarray(np.vstack(pts))


@dataclass(eq=False)
class RigidBody:
    body_id: int
    shape: BodyShape
    pose: Pose = None
    density: float = DEFAULT_DENSITY
    friction: float = DEFAULT_FRICTION
    static: bool = False
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.pose is None:
            self.pose = Pose(translation=self.shape.center.copy())
        if self.density <= 0 and not self.static:
            raise ValueError("density must be positive")

    @classmethod
    def from_mesh(cls, body_id: int, mesh: ConvexMesh, **kw) -> "RigidBody":
        """Body whose world-space geometry equals ``mesh`` at identity rotation."""
        return cls(body_id, BodyShape(mesh), **kw)

    @property
    def mass(self) -> float:
        return self.shape.volume * self.density

    @property
    def inertia(self) -> np.ndarray:
        return self.shape.unit_inertia * self.density

    def world_mesh(self) -> ConvexMesh:
        return self.shape.local.transformed(self.pose.matrix, self.pose.translation)


@dataclass
class PushAction:
    start_point: np.ndarray
    direction: np.ndarray
    duration: float
    speed: float = 0.05
    effector_radius: float = 0.01

    def __post_init__(self):
        self.start_point = np.asarray(self.start_point, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        self.direction = d / np.linalg.norm(d)
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def position(self, t: float) -> np.ndarray:
        return self.start_point + self.direction * self.speed * min(max(t, 0.0), self.duration)

    def to_dict(self) -> dict:
        return {"start_point": self.start_point.tolist(), "direction": self.direction.tolist(),
                "duration": self.duration, "speed": self.speed,
                "effector_radius": self.effector_radius}

    @classmethod
    def from_dict(cls, d: dict) -> "PushAction":
        return cls(d["start_point"], d["direction"], d["duration"], d.get("speed", 0.05),
                   d.get("effector_radius", 0.01))


@dataclass
class SimTrace:
    """Poses sampled at the output rate; ``positions`` is (frames, bodies, 3)."""

    body_ids: list
    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    displacement: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def to_csv(self) -> str:
        rows = ["frame,body_id,qx,qy,qz,qw,tx,ty,tz"]
        for f in range(self.n_frames):
            for b, bid in enumerate(self.body_ids):
                q = self.rotations[f, b]
                t = self.positions[f, b]
                rows.append(f"{f},{bid}," + ",".join(f"{x:.9g}" for x in (*q, *t)))
        return "\n".join(rows) + "\n"


@dataclass
class SolverSettings:
    iterations: int = 10
    baumgarte: float = 0.2
    slop: float = 0.0005
    linear_damping: float = 0.05
    angular_damping: float = 0.1
    effector_friction: float = 0.5


class World:
    """Bodies, support planes and gravity. Mutated in place by simulation."""

    def __init__(self, bodies: Sequence[RigidBody] = (), planes: Sequence = (),
                 gravity=(0.0, 0.0, -9.81), timestep: float = DEFAULT_DT,
                 settings: Optional[SolverSettings] = None):
        if timestep <= 0:
            raise ValueError("timestep must be positive")
        self.bodies = list(bodies)
        self.planes = [(np.asarray(n, dtype=float) / np.linalg.norm(n), float(o)) for n, o in planes]
        self.gravity = np.asarray(gravity, dtype=float)
        self.timestep = timestep
        self.settings = settings or SolverSettings()
        self.time = 0.0
        self._warm = (np.zeros(0, np.int64), np.zeros((0, 4)))

    # -- packing -----------------------------------------------------------
    def _pack(self):
        bodies = self.bodies
        n = len(bodies)
        samples, sstart, fn, fo, fstart = [], [0], [], [], [0]
        for b in bodies:
            samples.append(b.shape.samples)
            sstart.append(sstart[-1] + len(b.shape.samples))
            fn.append(b.shape.face_normals)
            fo.append(b.shape.face_offsets)
            fstart.append(fstart[-1] + len(b.shape.face_offsets))
        inv_mass = np.array([0.0 if b.static else 1.0 / b.mass for b in bodies])
        inv_inertia = np.array([np.zeros((3, 3)) if b.static else np.linalg.inv(b.inertia)
                                for b in bodies]).reshape(n, 3, 3)
        planes_n = np.array([p[0] for p in self.planes]).reshape(-1, 3)
        planes_o = np.array([p[1] for p in self.planes], dtype=float)
        return dict(
            inv_mass=inv_mass, inv_inertia=inv_inertia,
            friction=np.array([b.friction for b in bodies], dtype=float),
            static=np.array([b.static for b in bodies], dtype=np.bool_),
            samples=np.vstack(samples) if samples else np.zeros((0, 3)),
            sstart=np.array(sstart, dtype=np.int64),
            fnorm=np.vstack(fn) if fn else np.zeros((0, 3)),
            foff=np.concatenate(fo) if fo else np.zeros(0),
            fstart=np.array(fstart, dtype=np.int64),
            radius=np.array([b.shape.radius for b in bodies], dtype=float),
            planes_n=np.ascontiguousarray(planes_n), planes_o=planes_o,
        )

    def state(self):
        pos = np.array([b.pose.translation for b in self.bodies], dtype=float).reshape(-1, 3)
        quat = np.array([b.pose.rotation for b in self.bodies], dtype=float).reshape(-1, 4)
        vel = np.array([b.velocity for b in self.bodies], dtype=float).reshape(-1, 3)
        omega = np.array([b.angular_velocity for b in self.bodies], dtype=float).reshape(-1, 3)
        return pos, quat, vel, omega

    def _store(self, pos, quat, vel, omega):
        for i, b in enumerate(self.bodies):
            b.pose = Pose(quat[i].copy(), pos[i].copy())
            b.velocity = vel[i].copy()
            b.angular_velocity = omega[i].copy()

    def dynamic_ids(self) -> list:
        return [b.body_id for b in self.bodies if not b.static]

    def body(self, body_id) -> RigidBody:
        for b in self.bodies:
            if b.body_id == body_id:
                return b
        raise KeyError(body_id)

    def penetration(self) -> float:
        """Largest body/body or body/support penetration depth in the current state."""
        p = self._pack()
        pos, quat, _, _ = self.state()
        return float(_core.max_penetration(pos, quat, p["samples"], p["sstart"], p["fnorm"],
                                           p["foff"], p["fstart"], p["radius"], p["static"],
                                           p["planes_n"], p["planes_o"]))

    def energy(self) -> float:
        """Kinetic plus gravitational potential energy of the dynamic bodies."""
        e = 0.0
        for b in self.bodies:
            if b.static:
                continue
            r = b.pose.matrix
            inertia = r @ b.inertia @ r.T
            e += 0.5 * b.mass * b.velocity @ b.velocity
            e += 0.5 * b.angular_velocity @ inertia @ b.angular_velocity
            e -= b.mass * self.gravity @ b.pose.translation
        return float(e)

    # -- stepping ------------------------------------------------------------
    def _run(self, duration: float, effector=None, v_eps: Optional[float] = None,
             min_time: float = 0.25, rest_window: float = 0.1,
             record: bool = True) -> SimTrace:
        """Advance the world; optionally stop early once every body is at rest."""
        p = self._pack()
        pos, quat, vel, omega = self.state()
        dt = self.timestep
        s = self.settings
        dyn = ~p["static"]
        start = pos.copy()
        ids = [b.body_id for b in self.bodies]
        times, positions, rotations = [], [], []
        frame_dt = 1.0 / OUTPUT_RATE
        next_frame = 0.0
        t = 0.0
        rest_steps = 0
        rest_needed = max(int(round(rest_window / dt)), 1)
        n_steps = int(math.ceil(duration / dt - 1e-9))
        keys, imp = self._warm
        eff_r = 0.0
        for k in range(n_steps):
            if record and t >= next_frame - 1e-12:
                times.append(t)
                positions.append(pos.copy())
                rotations.append(quat.copy())
                next_frame += frame_dt
            if effector is not None:
                c0 = effector.position(t)
                c1 = effector.position(t + dt)
                eff_c = 0.5 * (c0 + c1)
                eff_v = (c1 - c0) / dt
                eff_r = effector.effector_radius
                eff_on = t < effector.duration
            else:
                eff_c = np.zeros(3)
                eff_v = np.zeros(3)
                eff_on = False
            keys, imp, _ = _core.step(
                pos, quat, vel, omega, p["inv_mass"], p["inv_inertia"], p["friction"], p["static"],
                p["samples"], p["sstart"], p["fnorm"], p["foff"], p["fstart"], p["radius"],
                p["planes_n"], p["planes_o"], eff_c, eff_v, eff_r, eff_on, s.effector_friction,
                self.gravity, dt, s.iterations, keys, imp,
                s.baumgarte, s.slop, s.linear_damping, s.angular_damping)
            t += dt
            if dyn.any() and np.abs(pos[dyn]).max() > BOUNDING_REGION:
                self._store(pos, quat, vel, omega)
                raise Diverged("a body left the bounding region")
            if v_eps is not None and t >= min_time:
                speed = np.linalg.norm(vel[dyn], axis=1) + \
                    np.linalg.norm(omega[dyn], axis=1) * p["radius"][dyn]
                rest_steps = rest_steps + 1 if (speed.size == 0 or speed.max() < v_eps) else 0
                if rest_steps >= rest_needed:
                    break
        self._warm = (keys, imp)
        self.time += t
        if record:
            n_frames = max(int(math.ceil(t * OUTPUT_RATE - 1e-9)), 1)
            while len(times) < n_frames:
                times.append(t)
                positions.append(pos.copy())
                rotations.append(quat.copy())
            times, positions, rotations = times[:n_frames], positions[:n_frames], rotations[:n_frames]
        self._store(pos, quat, vel, omega)
        disp = np.linalg.norm(pos - start, axis=1)
        return SimTrace(ids, np.array(times), np.array(positions).reshape(-1, len(ids), 3),
                        np.array(rotations).reshape(-1, len(ids), 4), disp)


def settle(world: World, v_eps: float = 0.005, t_max: float = 3.0, min_time: float = 0.25):
    """Simulate gravity until every body moves slower than ``v_eps`` or ``t_max`` passes.

    Returns the trace and a mapping body_id -> centroid displacement. A
    ``Diverged`` error means some body was ejected from the scene.
    """
    if v_eps <= 0:
        raise ValueError("v_eps must be positive")
    trace = world._run(t_max, v_eps=v_eps, min_time=min_time)
    disp = {bid: float(d) for bid, d in zip(trace.body_ids, trace.displacement)}
    return trace, disp


def replay_actions(world: World, actions: Sequence[PushAction], settle_after: float = 0.5) -> SimTrace:
    """Drive a kinematic spherical effector through each push in turn.

    The effector moves from ``start_point`` along ``direction`` at ``speed``;
    after the last push the world runs for ``settle_after`` seconds so that the
    final frame shows resting poses.
    """
    traces, offsets = [], []
    t0 = world.time
    start = np.array([b.pose.translation for b in world.bodies]).reshape(-1, 3)
    for a in actions:
        offsets.append(world.time - t0)
        traces.append(world._run(a.duration, effector=a))
    if settle_after > 0 or not traces:
        offsets.append(world.time - t0)
        traces.append(world._run(max(settle_after, world.timestep)))
    pos = np.array([b.pose.translation for b in world.bodies]).reshape(-1, 3)
    return SimTrace(traces[0].body_ids,
                    np.concatenate([tr.times + off for tr, off in zip(traces, offsets)]),
                    np.concatenate([tr.positions for tr in traces]),
                    np.concatenate([tr.rotations for tr in traces]),
                    np.linalg.norm(pos - start, axis=1))


def rotation_angle(q0: np.ndarray, q1: np.ndarray) -> float:
    """Angle in radians of the relative rotation between two scalar-last quaternions."""
    r = Rotation.from_quat(q1) * Rotation.from_quat(q0).inv()
    return float(np.linalg.norm(r.as_rotvec()))


def box_mesh(size, center=(0.0, 0.0, 0.0), rotation: Optional[np.ndarray] = None) -> ConvexMesh:
    from ..geometry import convex_hull
    sx, sy, sz = np.asarray(size, dtype=float) / 2.0
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    if rotation is not None:
        corners = corners @ np.asarray(rotation).T
    return convex_hull(corners + np.asarray(center, dtype=float))
