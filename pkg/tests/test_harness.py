import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipr.geometry import FREE, SURFACE, UNKNOWN, VoxelGrid, voxelize
from ipr.harness import (SceneObject, SyntheticScene, capture, default_camera, f1_score, generate_scene,
                         in_contact, iou, overlap)
from ipr.harness.benchmark import (EvalReport, build_problem, evaluate_models, mechanical_spread,
                                   run_benchmark, run_variant, variant_config)
from ipr.harness.fixtures import separated_scene
from ipr.harness.scenes import PALETTE
from ipr.inference import InferenceConfig, interaction_groups
from ipr.simulator.render import Camera
from ipr.simulator.world import box_mesh, settle


def grid_with(cells, dims=(4, 2, 2)):
    g = VoxelGrid.covering((0, 0, 0), np.array(dims) * 1.0, 1.0, dtype=bool)
    for c in cells:
        g.cells[c] = True
    return g


class TestMetrics:
    def test_third(self):
        s = overlap(grid_with([(0, 0, 0), (1, 0, 0)]), grid_with([(1, 0, 0), (2, 0, 0)]))
        assert s.iou == pytest.approx(1 / 3)
        assert s.precision == pytest.approx(0.5) and s.recall == pytest.approx(0.5)

    def test_equal(self):
        a = grid_with([(0, 0, 0), (3, 1, 1)])
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        assert iou(grid_with([(0, 0, 0)]), grid_with([(3, 1, 1)])) == 0.0

    def test_empty_union(self):
        assert iou(grid_with([]), grid_with([])) == 1.0
        assert iou(grid_with([(0, 0, 0)]), grid_with([])) == 0.0

    def test_frame_mismatch(self):
        with pytest.raises(ValueError):
            overlap(grid_with([], (4, 2, 2)), grid_with([], (4, 2, 3)))

    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_bounds_and_f1(self, seed, pa, pb):
        r = np.random.default_rng(seed)
        a = r.random((5, 4, 3)) < pa
        b = r.random((5, 4, 3)) < pb
        s = overlap(a, b)
        for v in (s.iou, s.precision, s.recall, s.f1):
            assert 0.0 <= v <= 1.0
        if s.precision + s.recall > 0:
            assert s.f1 == pytest.approx(2 * s.precision * s.recall / (s.precision + s.recall))
        inter, union = (a & b).sum(), (a | b).sum()
        if union:
            assert s.iou == pytest.approx(inter / union)

    def test_f1_zero(self):
        assert f1_score(0.0, 0.0) == 0.0


class TestScenes:
    def test_single_box_stable(self):
        sc = generate_scene(count=1, families=("box",), seed=3)
        w = sc.world()
        _, disp = settle(w)
        assert max(disp.values()) < 0.002

    def test_tight_contact(self):
        for seed in range(3):
            assert in_contact(generate_scene(count=5, tight=True, seed=seed))

    def test_same_seed(self):
        assert generate_scene(count=3, seed=9).digest() == generate_scene(count=3, seed=9).digest()

    @pytest.mark.parametrize("count", [0, 11])
    def test_bad_count(self, count):
        with pytest.raises(ValueError):
            generate_scene(count=count)

    def test_bad_family(self):
        with pytest.raises(ValueError):
            generate_scene(families=("torus",))

    def test_save_load(self, tmp_path):
        sc = generate_scene(count=2, seed=4, pushes=1)
        sc.save(tmp_path)
        back = SyntheticScene.load(tmp_path)
        assert back.digest() == sc.digest()
        assert len(back.actions) == 1

    def test_container(self):
        sc = generate_scene(count=2, seed=1, container=True)
        assert sc.statics


def face_on_scene():
    cam = Camera.look_at((-0.5, 0.0, 0.05), (0.0, 0.0, 0.05), width=64, height=64, fov_deg=40.0)
    box = box_mesh((0.04, 0.08, 0.08), (0.0, 0.0, 0.04))
    return SyntheticScene([SceneObject(box, PALETTE[0])], cam)


class TestCapture:
    def test_empty_scene(self):
        sc = SyntheticScene([], default_camera())
        sc.planes = []
        cap = capture(sc, noise_sigma=0.0)
        assert len(cap.points) == 0
        cam = sc.camera
        g = cap.visible_space.grid
        idx = np.indices(g.dims).reshape(3, -1).T
        uvz = cam.project(g.centers(idx))
        inview = (uvz[:, 0] >= 0.5) & (uvz[:, 0] < cam.width - 1.5) & (uvz[:, 1] >= 0.5) & \
                 (uvz[:, 1] < cam.height - 1.5) & (uvz[:, 2] > cam.near) & (uvz[:, 2] < cam.far - 0.01)
        assert np.all(g.cells.reshape(-1)[inview] == FREE)

    def test_noise_free_depth(self):
        sc = face_on_scene()
        cap = capture(sc, noise_sigma=0.0)
        mask = cap.observation.object_mask == 0
        # the front face x = -0.02 lies 0.48 m ahead along the optical axis
        np.testing.assert_allclose(cap.observation.depth[mask], 0.48, atol=1e-6)

    def test_unknown_behind_face(self):
        sc = face_on_scene()
        cap = capture(sc, noise_sigma=0.0)
        g = cap.visible_space.grid
        cam = sc.camera
        idx = np.indices(g.dims).reshape(3, -1).T
        c = g.centers(idx)
        labels = g.cells.reshape(-1)
        # brute force: a cell is hidden when the segment from the camera to it crosses the front face
        t = (-0.02 - cam.position[0]) / (c[:, 0] - cam.position[0])
        cross = cam.position + t[:, None] * (c - cam.position)
        behind = (c[:, 0] > -0.02) & (np.abs(cross[:, 1]) < 0.04 - 0.006) & \
                 (np.abs(cross[:, 2] - 0.04) < 0.04 - 0.006)
        assert np.all(labels[behind & (c[:, 0] > -0.01)] == UNKNOWN)
        # well in front of the face, inside its silhouette, space is free
        front = (c[:, 0] < -0.03) & (c[:, 0] > -0.1) & (np.abs(c[:, 1]) < 0.03) & (np.abs(c[:, 2] - 0.04) < 0.03)
        assert np.all(labels[front] == FREE)
        # the unknown region runs to the far end of the grid
        assert np.any(behind & (c[:, 0] > g.origin[0] + (g.dims[0] - 1) * g.resolution - 0.01))

    def test_surface_cells_near_truth(self):
        sc = generate_scene(count=3, seed=2)
        cap = capture(sc, noise_sigma=0.001)
        g = cap.visible_space.grid
        idx = np.argwhere(g.cells == SURFACE)
        c = g.centers(idx)
        d = np.min([np.abs(o.mesh.signed_distance_bound(c)) for o in sc.objects] + [np.abs(c[:, 2])], axis=0)
        assert np.all(d <= math.sqrt(3) * g.resolution)

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            capture(face_on_scene(), noise_sigma=-1.0)


@pytest.fixture(scope="module")
def small_problem():
    sc = generate_scene(count=2, seed=1, pushes=1)
    return sc, build_problem(sc, m=4, seed=1, frame_stride=3)


class TestBenchmark:
    def test_variant_configs(self):
        assert variant_config("CollisionChecker").rollouts == 0
        assert not variant_config("IPR+size").simulate_actions
        assert variant_config("IPR+action+size").prior.kind == "size"
        with pytest.raises(ValueError):
            variant_config("Oracle")

    def test_collision_checker_is_zero_rollouts(self, small_problem):
        _, pb = small_problem
        cc, _, _ = run_variant(pb, "CollisionChecker")
        zero, _, _ = run_variant(pb, "IPR+uniform", InferenceConfig(rollouts=0))
        assert cc.key == zero.key

    def test_recall_not_below_minimum(self, small_problem):
        _, pb = small_problem
        x, _, _ = run_variant(pb, "IPR+action+uniform", InferenceConfig(rollouts=20))
        chosen, _ = evaluate_models(pb, {m.object_id: m for m in x.models})
        mins, _ = evaluate_models(pb, {hs.object_id: hs.minimum for hs in pb.sets})
        for g in chosen:
            assert chosen[g].recall >= mins[g].recall - 1e-12

    def test_report_reproducible(self):
        scenes = [generate_scene(count=2, seed=5, pushes=1)]
        cfg = InferenceConfig(rollouts=10)
        a = run_benchmark(scenes, ["CollisionChecker", "IPR+uniform"], cfg, m=3)
        b = run_benchmark(scenes, ["CollisionChecker", "IPR+uniform"], cfg, m=3)
        assert a.to_csv(runtime=False) == b.to_csv(runtime=False)
        rows = a.to_csv().splitlines()
        assert rows[0] == "variant,scene,object,IoU,precision,recall,F1,runtime_s"
        assert len(rows) == 1 + 2 * (2 + 1)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            run_benchmark([], ["CollisionChecker"])
        with pytest.raises(ValueError):
            run_benchmark([generate_scene(count=1)], [])

    def test_failures_recorded(self):
        empty = SyntheticScene([SceneObject(box_mesh((0.001, 0.001, 0.001), (5, 5, 0.0005)), PALETTE[0])],
                               default_camera())
        rep = run_benchmark([empty], ["CollisionChecker"], m=2)
        assert rep.failures and not rep.rows

    def test_report_mean(self):
        rep = EvalReport()
        from ipr.harness.metrics import OverlapScores
        rep.add("IPR+uniform", "s", 0, OverlapScores(0.5, 1, 0.5, 2 / 3), 1.0)
        rep.add("IPR+uniform", "s", 1, OverlapScores(0.7, 1, 0.7, 0.8), 1.0)
        rep.add("IPR+uniform", "s", "scene", OverlapScores(0.1, 1, 0.1, 0.2), 1.0)
        assert rep.mean("IPR+uniform") == pytest.approx(0.6)
        assert rep.mean("IPR+uniform", level="scene") == pytest.approx(0.1)


def test_mechanical_spread_small():
    sc = generate_scene(count=3, seed=0, pushes=1)
    s = mechanical_spread(sc, samples=5, seed=0)
    assert s.shape == (3,) and np.all(s >= 0)


def test_separated_scene_groups():
    sc = separated_scene(seed=5)
    pb = build_problem(sc, m=3, seed=0, frame_stride=3)
    groups = interaction_groups(pb.sets, sc.actions, sc.camera)
    assert groups == [[k] for k in range(len(pb.sets))]


def test_ground_truth_voxels(small_problem):
    sc, _ = small_problem
    for o in sc.objects:
        v = voxelize(o.mesh, 0.005)
        assert v.cells.sum() * 0.005 ** 3 == pytest.approx(o.mesh.volume, rel=0.35)
