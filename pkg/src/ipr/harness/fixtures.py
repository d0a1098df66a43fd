"""Hand-built scenes used by the acceptance suite and the examples."""
from __future__ import annotations

import numpy as np

from ..simulator.render import Camera
from ..simulator.world import PushAction, box_mesh
from .scenes import PALETTE, SceneObject, SyntheticScene, default_camera


def occluded_box_scene(size=(0.06, 0.06, 0.10), front_height: float = 0.06) -> SyntheticScene:
    """A tall box behind a drawer front that hides its lower part.

    Only the top of the box is visible, so the thinnest model floats in the
    air while models reaching down to the table stand still.
    """
    sx, sy, sz = size
    box = box_mesh(size, (0.0, 0.0, sz / 2))
    front = box_mesh((0.01, 0.30, front_height), (-sx / 2 - 0.03, 0.0, front_height / 2))
    side = box_mesh((0.20, 0.01, front_height), (-0.05, -sy / 2 - 0.03, front_height / 2))
    return SyntheticScene([SceneObject(box, PALETTE[0], "box")], default_camera(), [],
                          [front, side], seed=0)


def book_push_scene(length: float = 0.22, width: float = 0.08, thickness: float = 0.04,
                    push_offset: float = 0.03, duration: float = 1.2) -> SyntheticScene:
    """A book lying flat whose far half is hidden by a tall block, pushed near its visible end.

    The push is off-center for the full book, so it turns; a model holding
    only the visible half is pushed closer to its center and mostly slides.
    """
    book = box_mesh((width, length, thickness), (0.0, 0.0, thickness / 2))
    block = box_mesh((0.12, 0.04, 0.16), (-0.10, 0.03, 0.08))
    start = np.array([-width / 2 - 0.02, -length / 2 + push_offset, thickness / 2])
    push = PushAction(start, (1.0, 0.0, 0.0), duration, 0.05, 0.01)
    return SyntheticScene([SceneObject(book, PALETTE[2], "book")], default_camera(), [push],
                          [block], seed=0)


def extent_models(scene: SyntheticScene, cut: float, lengths=(None, 0.15), object_id: int = 0):
    """Models of the book that share its visible part and differ in hidden length.

    The first model stops at ``cut``, the far edge of what the camera saw.
    Each entry of ``lengths`` adds a model reaching the given y coordinate;
    ``None`` stands for the true far end.
    """
    from ..geometry import convex_hull
    from ..hypothesis import HypothesisSet, ObjectModel, signature

    verts = scene.objects[0].mesh.vertices
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    ends = [cut] + [hi[1] if e is None else e for e in lengths]
    models = []
    for k, y1 in enumerate(ends):
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], y1) for z in (lo[2], hi[2])])
        hull = convex_hull(corners)
        models.append(ObjectModel(object_id, [], [], hull, hull.volume, signature(hull), k == 0))
    return HypothesisSet(object_id, models)


def separated_scene(count: int = 3, seed: int = 0, spacing: float = 0.2, pushes: int = 1,
                    push_time: float = 0.6,
                    families=("box", "wedge", "cylinder", "book")) -> SyntheticScene:
    """Objects in a row across the view, far enough apart that none can touch or hide another."""
    from ..simulator.world import settle
    from .scenes import UnstableScene, _sample_push, convex_hull, sample_shape

    rng = np.random.default_rng(seed)
    cam = Camera.look_at((-0.42, -0.12, 0.36), (0.0, 0.0, 0.03), width=192, height=192, fov_deg=60.0)
    look = -cam.position[:2] / np.linalg.norm(cam.position[:2])
    across = np.array([-look[1], look[0]])
    for _ in range(20):
        objs = []
        for i in range(count):
            fam = families[rng.integers(len(families))]
            verts = sample_shape(fam, rng)
            yaw = rng.uniform(0, np.pi)
            c, s = np.cos(yaw), np.sin(yaw)
            verts = verts @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T
            pos = across * spacing * (i - (count - 1) / 2)
            objs.append(SceneObject(convex_hull(verts + [pos[0], pos[1], 0.0]), PALETTE[i % len(PALETTE)], fam))
        scene = SyntheticScene(objs, cam, [], [], seed)
        world = scene.world()
        settle(world, t_max=2.0)
        _, extra = settle(world, t_max=1.0)
        if max(extra[i] for i in range(count)) > 0.002:
            continue
        objs = [SceneObject(world.body(i).world_mesh(), o.color, o.family) for i, o in enumerate(objs)]
        scene = SyntheticScene(objs, cam, [], [], seed)
        scene.actions = [a for a in (_sample_push(scene, rng, duration=push_time) for _ in range(pushes))
                         if a is not None]
        if len(scene.actions) == pushes:
            return scene
    raise UnstableScene("no stable separated arrangement")
