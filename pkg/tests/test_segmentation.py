import itertools
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipr.harness.scenes import PALETTE, SceneObject, SyntheticScene, capture, default_camera
from ipr.segmentation import (PartialObject, PointCloud, SingularGraph, Supervoxel,
                              SupervoxelGraph, associate_frames, build_adjacency, choose_cluster_count,
                              convexity_weight, extract_supervoxels, read_ply, remove_known_geometry,
                              segment, segmentation_to_json, spectral_cluster, write_ply)
from ipr.geometry import Facet
from ipr.simulator.render import Camera
from ipr.simulator.world import box_mesh

TABLE = [((0.0, 0.0, 1.0), 0.0)]


def _scene(meshes, camera=None):
    objs = [SceneObject(m, PALETTE[k % len(PALETTE)]) for k, m in enumerate(meshes)]
    return SyntheticScene(objs, camera or default_camera())


def _cloud(scene, seed=0, noise=0.001):
    cap = capture(scene, noise_sigma=noise, seed=seed)
    return cap, PointCloud(cap.points, cap.colors)


@pytest.fixture(scope="module")
def two_boxes():
    # two 6 cm cubes with a 10 cm gap
    return _scene([box_mesh((0.06, 0.06, 0.06), (0.0, -0.08, 0.03)),
                   box_mesh((0.06, 0.06, 0.06), (0.0, 0.08, 0.03))])


def _sv(k, center, normal=(0, 0, 1), color=(0.5, 0.5, 0.5)):
    c = np.asarray(center, float)
    return Supervoxel(k, c, np.asarray(normal, float), np.array([k]), np.asarray(color, float), c[None])


class TestConvexityWeight:
    def test_coplanar(self):
        assert convexity_weight((0, 0, 0), (0, 0, 1), (1, 0, 0), (0, 0, 1)) == 0.0

    def test_convex_edge(self):
        assert convexity_weight((0, 0, 1), (0, 0, 1), (0.5, 0, 0.5), (1, 0, 0)) == 0.5

    def test_concave_step(self):
        assert convexity_weight((0, 0, 0), (0, 0, 1), (1, 0, 0.5), (-1, 0, 0)) == 0.0

    @given(st.lists(st.floats(-1, 1), min_size=12, max_size=12))
    def test_non_negative_and_symmetric(self, v):
        ci, vi, cj, vj = (np.array(v[k:k + 3]) for k in range(0, 12, 3))
        w = convexity_weight(ci, vi, cj, vj)
        assert w >= 0.0
        assert w == convexity_weight(cj, vj, ci, vi)


class TestKnownGeometry:
    def test_plane_only(self, rng):
        pts = np.column_stack([rng.uniform(-0.2, 0.2, (500, 2)), rng.normal(0, 0.001, 500)])
        out = remove_known_geometry(PointCloud(pts, None), TABLE)
        assert len(out) == 0

    def test_cube_on_plane(self, rng):
        scene = _scene([box_mesh((0.06, 0.06, 0.06), (0, 0, 0.03))])
        cap, cloud = _cloud(scene)
        out = remove_known_geometry(cloud, TABLE)
        kept = cap.labels[out.index]
        cube = cap.labels == 0
        # plane points go, cube points well above the table stay
        assert (kept == -1).mean() < 0.02
        high = cube & (cap.points[:, 2] > 0.01)
        assert np.isin(np.flatnonzero(high), out.index).all()

    def test_no_planes(self, rng):
        # two solid 10 cm blocks: no plane holds anywhere near 30% of the cloud
        pts = np.vstack([rng.uniform(0, 0.1, (100, 3)), rng.uniform(0, 0.1, (100, 3)) + 0.3])
        out = remove_known_geometry(PointCloud(pts, None), None)
        assert len(out) == 200

    def test_empty_cloud(self):
        with pytest.raises(ValueError):
            remove_known_geometry(PointCloud(np.zeros((0, 3)), None), TABLE)


class TestSupervoxels:
    def test_flat_patch(self, rng):
        pts = np.column_stack([rng.uniform(0, 0.1, (400, 2)), np.zeros(400)])
        svs = extract_supervoxels(PointCloud(pts, np.full((400, 3), 0.4)), 0.02, 0.1, (0, 0, 1))
        assert 15 <= len(svs) <= 40
        for s in svs:
            assert np.degrees(np.arccos(min(1.0, abs(s.normal[2])))) < 5
            # the stored normal is the smallest principal direction of the members
            c = s.points - s.points.mean(axis=0)
            if len(s.points) >= 3:
                w, v = np.linalg.eigh(c.T @ c)
                assert abs(v[:, 0] @ s.normal) == pytest.approx(1.0, abs=1e-6)

    def test_separated_clusters(self, rng):
        a = rng.normal(0, 0.005, (80, 3))
        pts = np.vstack([a, a + [0.2, 0, 0]])
        svs = extract_supervoxels(PointCloud(pts, None))
        for s in svs:
            assert len(set((s.members >= 80).tolist())) == 1

    def test_single_point(self):
        svs = extract_supervoxels(PointCloud(np.array([[0.1, 0.2, 0.3]]), None))
        assert len(svs) == 1
        np.testing.assert_allclose(svs[0].center, [0.1, 0.2, 0.3])

    @given(st.integers(0, 1000))
    def test_partition(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(20, 200))
        pts = r.uniform(0, 0.15, (n, 3))
        svs = extract_supervoxels(PointCloud(pts, r.uniform(0, 1, (n, 3))))
        members = np.concatenate([s.members for s in svs])
        assert sorted(members.tolist()) == list(range(n))
        for s in svs:
            np.testing.assert_allclose(s.center, pts[s.members].mean(axis=0), atol=1e-12)


class TestSpectral:
    def _clique_graph(self, sizes, bridge=0.0):
        nodes, edges, aff = [], [], {}
        start = 0
        for size in sizes:
            ids = range(start, start + size)
            nodes += [_sv(k, (k, 0, 0)) for k in ids]
            for i, j in itertools.combinations(ids, 2):
                edges.append((i, j, 1.0))
                aff[(i, j)] = 1.0
            start += size
        if bridge:
            edges.append((0, sizes[0], bridge))
            aff[(0, sizes[0])] = bridge
        return SupervoxelGraph(nodes, edges, aff)

    def test_two_cliques(self):
        groups = spectral_cluster(self._clique_graph([5, 7]))
        assert [g.tolist() for g in groups] == [list(range(5)), list(range(5, 12))]

    def test_one_clique(self):
        assert len(spectral_cluster(self._clique_graph([6]))) == 1

    def test_weak_bridge_still_splits(self):
        assert len(spectral_cluster(self._clique_graph([6, 6], bridge=0.01))) == 2

    def test_all_zero_weights(self):
        nodes = [_sv(k, (k, 0, 0)) for k in range(4)]
        g = SupervoxelGraph(nodes, [(0, 1, 0.0), (2, 3, 0.0)], {})
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            groups = spectral_cluster(g, use_affinity=False)
        assert any(issubclass(w.category, SingularGraph) for w in caught)
        assert sorted(g.tolist() for g in groups) == [[0, 1], [2, 3]]

    @pytest.mark.parametrize("vals,expect", [
        ([0.0, 0.0, 0.9, 1.0, 1.1], 2),
        ([0.0, 0.8, 0.9, 1.0], 1),
        ([0.0, 0.0, 0.0, 0.7], 3),
    ])
    def test_eigengap(self, vals, expect):
        assert choose_cluster_count(np.array(vals)) == expect


class TestPipeline:
    def test_two_boxes_two_objects(self, two_boxes):
        cap, cloud = _cloud(two_boxes)
        objs = segment(cloud, two_boxes.camera.position, known_planes=TABLE)
        assert len(objs) == 2
        # ground-truth oracle: each object draws its points from one box
        for o in objs:
            labels = cap.labels[np.concatenate(o.facet_indices)]
            assert np.mean(labels == np.bincount(labels[labels >= 0]).argmax()) > 0.95

    def test_partition_and_disjoint_facets(self, two_boxes):
        _, cloud = _cloud(two_boxes)
        objs = segment(cloud, two_boxes.camera.position, known_planes=TABLE)
        rows = np.concatenate([ix for o in objs for ix in o.facet_indices])
        assert len(rows) == len(np.unique(rows))
        for o in objs:
            assert all(f.origin.value == "observed" for f in o.facets)

    def test_intra_edges_more_convex_than_contact(self):
        scene = _scene([box_mesh((0.06, 0.06, 0.06), (0.0, -0.03, 0.03)),
                        box_mesh((0.06, 0.06, 0.10), (0.0, 0.03005, 0.05))])
        cap, cloud = _cloud(scene, noise=0.0005)
        cleaned = remove_known_geometry(cloud, TABLE)
        svs = extract_supervoxels(cleaned, camera_position=scene.camera.position)
        g = build_adjacency(svs)
        owner = [np.bincount(np.maximum(cap.labels[cleaned.index[s.members]], 0)).argmax() for s in svs]
        intra = [w for i, j, w in g.edges if owner[i] == owner[j]]
        inter = [w for i, j, w in g.edges if owner[i] != owner[j]]
        assert inter and np.mean(intra) > np.mean(inter)

    def test_cube_corner_three_facets(self):
        cam = Camera.look_at((-0.3, -0.3, 0.33), (0.0, 0.0, 0.03), fov_deg=45.0)
        scene = _scene([box_mesh((0.08, 0.08, 0.08), (0, 0, 0.04))], cam)
        _, cloud = _cloud(scene, noise=0.0005)
        (obj,) = segment(cloud, cam.position, known_planes=TABLE)
        assert len(obj.facets) == 3
        for a, b in itertools.combinations(obj.facets, 2):
            assert abs(np.degrees(np.arccos(np.clip(a.normal @ b.normal, -1, 1))) - 90) < 5

    def test_board_face_on(self):
        cam = Camera.look_at((0.0, -0.001, 0.5), (0.0, 0.0, 0.0), fov_deg=45.0)
        scene = _scene([box_mesh((0.12, 0.12, 0.01), (0, 0, 0.005))], cam)
        _, cloud = _cloud(scene, noise=0.0005)
        (obj,) = segment(cloud, cam.position, known_planes=TABLE)
        assert len(obj.facets) == 1

    def test_cylinder_side(self):
        from ipr.geometry import convex_hull
        ang = np.linspace(0, 2 * np.pi, 24, endpoint=False)
        ring = np.column_stack([0.04 * np.cos(ang), 0.04 * np.sin(ang)])
        verts = np.vstack([np.column_stack([ring, np.zeros(24)]), np.column_stack([ring, np.full(24, 0.12)])])
        cam = Camera.look_at((-0.45, 0.0, 0.08), (0.0, 0.0, 0.06), fov_deg=45.0)
        scene = _scene([convex_hull(verts)], cam)
        _, cloud = _cloud(scene, noise=0.0005)
        (obj,) = segment(cloud, cam.position, known_planes=TABLE)
        side = [f for f in obj.facets if abs(f.normal[2]) < 0.5]
        assert len(side) >= 4

    def test_deterministic(self, two_boxes):
        _, cloud = _cloud(two_boxes)
        a = segmentation_to_json(segment(cloud, two_boxes.camera.position, known_planes=TABLE))
        b = segmentation_to_json(segment(cloud, two_boxes.camera.position, known_planes=TABLE))
        strip = lambda s: [[f["points"] for f in o["facets"]] for o in json.loads(s)["objects"]]
        assert strip(a) == strip(b)

    def test_empty_after_removal(self, rng):
        pts = np.column_stack([rng.uniform(-0.2, 0.2, (300, 2)), np.zeros(300)])
        assert segment(PointCloud(pts, None), (0, 0, 1), known_planes=TABLE) == []


class TestAssociation:
    def _obj(self, k, c):
        return PartialObject(k, [Facet(f"x{k}", np.asarray(c, float)[None], (0, 0, 1))])

    def test_identity(self):
        objs = [self._obj(0, (0, 0, 0)), self._obj(1, (0.3, 0, 0))]
        assert associate_frames(objs, objs) == {0: 0, 1: 1}

    def test_moved(self):
        prev = [self._obj(0, (0, 0, 0))]
        cur = [self._obj(5, (0.02, 0, 0))]
        assert associate_frames(prev, cur) == {5: 0}

    def test_removed_and_new(self):
        prev = [self._obj(0, (0, 0, 0)), self._obj(1, (0.3, 0, 0))]
        cur = [self._obj(0, (0, 0, 0)), self._obj(1, (0.9, 0, 0))]
        m = associate_frames(prev, cur)
        assert m[0] == 0 and m[1] not in (0, 1)


def test_ply_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.uniform(-1, 1, (50, 3)), rng.uniform(0, 1, (50, 3)))
    write_ply(tmp_path / "c.ply", cloud)
    back = read_ply(tmp_path / "c.ply")
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)
    np.testing.assert_allclose(back.colors, cloud.colors, atol=1 / 255)


def test_bad_ply(tmp_path):
    (tmp_path / "x.ply").write_text("not a ply\n")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "x.ply")
