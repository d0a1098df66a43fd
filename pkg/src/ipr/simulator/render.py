"""Pinhole depth rendering by ray / convex-polytope intersection, and Eq.-style scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .world import World

EMPTY = -1
STATIC = -2


class ResolutionMismatch(ValueError):
    pass


@dataclass
class Camera:
    """Pinhole camera. ``rotation`` maps camera axes (x right, y down, z forward) to world."""

    width: int = 128
    height: int = 128
    fx: float = 110.0
    fy: float = 110.0
    cx: float = 63.5
    cy: float = 63.5
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    near: float = 0.05
    far: float = 1.5

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.fx <= 0 or self.fy <= 0:
            raise ValueError("invalid camera intrinsics")
        self.position = np.asarray(self.position, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0), width=128, height=128,
                fov_deg: float = 60.0, **kw) -> "Camera":
        eye = np.asarray(eye, dtype=float)
        fwd = np.asarray(target, dtype=float) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=float))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(width, height, f, f, (width - 1) / 2, (height - 1) / 2, eye,
                   np.column_stack([right, down, fwd]), **kw)

    def ray_directions(self) -> np.ndarray:
        """World-space ray per pixel, scaled so the camera-z component is 1."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u, float)], -1)
        return d.reshape(-1, 3) @ self.rotation.T

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pixel coordinates (u, v) and camera depth of world points."""
        pc = (np.atleast_2d(points) - self.position) @ self.rotation
        z = pc[:, 2]
        return np.column_stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy, z])

    def back_project(self, depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points for finite pixels of a depth image, plus their flat pixel indices."""
        d = self.ray_directions()
        flat = depth.ravel()
        ok = np.flatnonzero(flat < self.far)
        return self.position + d[ok] * flat[ok, None], ok

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy, "position": self.position.tolist(),
                "rotation": self.rotation.tolist(), "near": self.near, "far": self.far}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


@dataclass
class PredictedObservation:
    depth: np.ndarray
    object_mask: np.ndarray
    camera: Camera

    def object_ids(self) -> list:
        ids = np.unique(self.object_mask)
        return [int(i) for i in ids if i >= 0]


def _ray_polytope(origin_local, dirs_local, normals, offsets):
    """Entry distance of rays into the polytope {x : n.x <= o}; inf on a miss."""
    denom = dirs_local @ normals.T
    num = offsets - normals @ origin_local
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    enter = np.where(denom < 0, t, -np.inf).max(axis=1)
    exit_ = np.where(denom > 0, t, np.inf).min(axis=1)
    parallel_out = ((denom == 0) & (num[None, :] < 0)).any(axis=1)
    hit = (enter <= exit_) & (exit_ > 0) & ~parallel_out
    return np.where(hit, np.maximum(enter, 0.0), np.inf)


def render_depth(world: World, camera: Camera, include_static: bool = True) -> PredictedObservation:
    """Z-buffer of every body hull and support plane seen through ``camera``.

    Depth is the camera-frame z distance; pixels that see no body hold the far
    plane. Dynamic bodies write their ``body_id`` into the mask, static
    geometry writes ``STATIC``.
    """
    n = camera.width * camera.height
    dirs = camera.ray_directions()
    depth = np.full(n, camera.far)
    mask = np.full(n, EMPTY, dtype=np.int64)
    for body in world.bodies:
        if body.static and not include_static:
            continue
        r = body.pose.matrix
        center = body.pose.translation
        # cull to the projected bounding sphere
        pc = (center - camera.position) @ camera.rotation
        rad = body.shape.radius
        if pc[2] + rad <= camera.near:
            continue
        if pc[2] - rad > camera.near:
            zmin = pc[2] - rad
            u0 = camera.fx * (pc[0] - rad) / zmin + camera.cx
            u1 = camera.fx * (pc[0] + rad) / zmin + camera.cx
            v0 = camera.fy * (pc[1] - rad) / zmin + camera.cy
            v1 = camera.fy * (pc[1] + rad) / zmin + camera.cy
            u0b = camera.fx * (pc[0] - rad) / (pc[2] + rad) + camera.cx
            u1b = camera.fx * (pc[0] + rad) / (pc[2] + rad) + camera.cx
            v0b = camera.fy * (pc[1] - rad) / (pc[2] + rad) + camera.cy
            v1b = camera.fy * (pc[1] + rad) / (pc[2] + rad) + camera.cy
            ulo, uhi = int(math.floor(min(u0, u0b))), int(math.ceil(max(u1, u1b)))
            vlo, vhi = int(math.floor(min(v0, v0b))), int(math.ceil(max(v1, v1b)))
            ulo, vlo = max(ulo, 0), max(vlo, 0)
            uhi, vhi = min(uhi, camera.width - 1), min(vhi, camera.height - 1)
            if ulo > uhi or vlo > vhi:
                continue
            vv, uu = np.mgrid[vlo:vhi + 1, ulo:uhi + 1]
            pix = (vv * camera.width + uu).ravel()
        else:
            pix = np.arange(n)
        o_local = (camera.position - center) @ r
        d_local = dirs[pix] @ r
        t = _ray_polytope(o_local, d_local, body.shape.face_normals, body.shape.face_offsets)
        closer = (t < depth[pix]) & (t >= camera.near)
        depth[pix[closer]] = t[closer]
        mask[pix[closer]] = STATIC if body.static else body.body_id
    if include_static:
        for normal, offset in world.planes:
            denom = dirs @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (offset - camera.position @ normal) / denom
            closer = (t > camera.near) & (t < depth) & np.isfinite(t)
            depth[closer] = t[closer]
            mask[closer] = STATIC
    return PredictedObservation(depth.reshape(camera.height, camera.width),
                                mask.reshape(camera.height, camera.width), camera)


def render_trace(world: World, trace, camera: Camera, stride: int = 1) -> list:
    """Render every ``stride``-th frame of ``trace`` (always including the last)."""
    from ..geometry import Pose
    if stride < 1:
        raise ValueError("stride must be >= 1")
    saved = [b.pose for b in world.bodies]
    frames = list(range(0, trace.n_frames, stride))
    if trace.n_frames and frames[-1] != trace.n_frames - 1:
        frames.append(trace.n_frames - 1)
    out = []
    try:
        for f in frames:
            for k, b in enumerate(world.bodies):
                b.pose = Pose(trace.rotations[f, k], trace.positions[f, k])
            out.append(render_depth(world, camera))
    finally:
        for b, pose in zip(world.bodies, saved):
            b.pose = pose
    return out


def observation_distance(observed: PredictedObservation, predicted: PredictedObservation,
                         object_ids=None) -> dict:
    """Per-object depth discrepancy, normalized by the square root of the mask union size.

    Pixels claimed by an object in only one of the two frames are charged the
    gap between the far plane and the depth that is present.
    """
    if observed.depth.shape != predicted.depth.shape:
        raise ResolutionMismatch("frames differ in resolution")
    far = predicted.camera.far
    if object_ids is None:
        object_ids = sorted(set(observed.object_ids()) | set(predicted.object_ids()))
    out = {}
    for i in object_ids:
        mo = observed.object_mask == i
        mp = predicted.object_mask == i
        union = mo | mp
        count = int(union.sum())
        if count == 0:
            out[i] = 0.0
            continue
        both = mo & mp
        diff = np.zeros(observed.depth.shape)
        diff[both] = observed.depth[both] - predicted.depth[both]
        only_o = mo & ~mp
        only_p = mp & ~mo
        diff[only_o] = far - observed.depth[only_o]
        diff[only_p] = far - predicted.depth[only_p]
        out[i] = float(np.sqrt(np.sum(diff[union] ** 2)) / math.sqrt(count))
    return out


def log_likelihood(distances, alpha: float = 10.0) -> float:
    """Negative alpha-weighted sum of distances (log of ``likelihood``)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    total = 0.0
    for frame in _iter_frames(distances):
        total += sum(frame)
    return -alpha * total


def likelihood(distances, alpha: float = 10.0) -> float:
    """exp(-alpha * sum over frames and objects of the distances)."""
    return math.exp(log_likelihood(distances, alpha))


def _iter_frames(distances):
    if isinstance(distances, Mapping):
        yield list(distances.values())
        return
    for frame in distances:
        if isinstance(frame, Mapping):
            yield list(frame.values())
        elif np.ndim(frame) == 0:
            yield [float(frame)]
        else:
            yield list(np.ravel(frame))


def write_pgm16(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(img.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts, pos = [], 0
    while len(parts) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        parts.append(data[pos:end])
        pos = end
    pos += 1
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(data[pos:pos + 2 * w * h], dtype=">u2").reshape(h, w).astype(np.uint16)


def depth_to_pgm(obs: PredictedObservation, path) -> None:
    """Millimeter depth, far plane encoded as 65535."""
    d = obs.depth
    mm = np.where(d >= obs.camera.far, 65535, np.clip(np.round(d * 1000.0), 0, 65534))
    write_pgm16(path, mm)


def mask_to_pgm(obs: PredictedObservation, path) -> None:
    """Body ids shifted by one; 0 is empty, 65535 marks static geometry."""
    m = obs.object_mask
    write_pgm16(path, np.where(m == STATIC, 65535, np.where(m < 0, 0, m + 1)))
