import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cube_points, in_unknown_brute, slab_space
from ipr.constraints import (JointSceneModel, above_support, check_constraints, clear_of_statics,
                             hull_overlap_depth, pairs_disjoint, prune_hypotheses)
from ipr.geometry import Facet, Origin, convex_hull
from ipr.hypothesis import HiddenSpace, HypothesisSet, _make_model, minimum_shape
from ipr.segmentation import PartialObject


def box_model(oid, size, center):
    """Box whose top face is observed and whose other corners are hypothesized."""
    pts = cube_points(size, center)
    top = pts[pts[:, 2] >= pts[:, 2].max() - 1e-12]
    bottom = pts[pts[:, 2] < pts[:, 2].max() - 1e-12]
    obs = Facet(f"o{oid}", top, (0, 0, 1))
    hyp = Facet(f"h{oid}", bottom, (0, 0, -1), Origin.HYPOTHESIZED)
    return _make_model(oid, [obs], [hyp])


def joint(*models):
    return JointSceneModel({m.object_id: 0 for m in models}, list(models))


class TestOverlapDepth:
    def test_separated(self):
        a = convex_hull(cube_points(0.1, (0, 0, 0.05)))
        b = convex_hull(cube_points(0.1, (0.15, 0, 0.05)))
        assert hull_overlap_depth(a, b) == pytest.approx(-0.025, abs=1e-9)

    def test_overlapping(self):
        a = convex_hull(cube_points(0.1, (0, 0, 0.05)))
        b = convex_hull(cube_points(0.1, (0.09, 0, 0.05)))
        # the deepest shared point sits mid-slab, 5 mm from both faces
        assert hull_overlap_depth(a, b) == pytest.approx(0.005, abs=1e-9)

    @given(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(0.02, 0.2))
    def test_matches_box_formula(self, dx, dy, s):
        a = convex_hull(cube_points(0.1, (0, 0, 0)))
        b = convex_hull(cube_points(s, (dx, dy, 0)))
        # for axis-aligned boxes the LP optimum has a closed form
        half = (0.1 + s) / 2
        gap_x, gap_y = half - abs(dx), half - abs(dy)
        if gap_x > 0 and gap_y > 0:
            expect = min(gap_x / 2, gap_y / 2, 0.05, s / 2)
            assert hull_overlap_depth(a, b) == pytest.approx(expect, abs=1e-7)
        else:
            assert hull_overlap_depth(a, b) <= 1e-9


class TestCheckConstraints:
    def test_apart(self):
        assert check_constraints(joint(box_model(0, 0.1, (0, 0, 0.05)), box_model(1, 0.1, (0.15, 0, 0.05))))

    def test_touching(self):
        assert check_constraints(joint(box_model(0, 0.1, (0, 0, 0.05)), box_model(1, 0.1, (0.1, 0, 0.05))))

    def test_one_voxel_overlap(self):
        x = joint(box_model(0, 0.1, (0, 0, 0.05)), box_model(1, 0.1, (0.095, 0, 0.05)))
        assert not check_constraints(x)

    def test_below_support(self):
        assert not above_support(box_model(0, 0.1, (0, 0, 0.04)))
        assert above_support(box_model(0, 0.1, (0, 0, 0.048)))

    @pytest.mark.parametrize("x,z,ok", [(0.005, -0.005, True),    # minimum-shape mirror next to the observed edge
                                        (0.005, -0.008, False),   # deeper than the band
                                        (0.05, -0.004, False)])   # far from anything observed
    def test_support_band(self, x, z, ok):
        g = np.linspace(0.0, 0.05, 11)
        yy, zz = np.meshgrid(g, g)
        side = np.column_stack([np.zeros(yy.size), yy.ravel(), zz.ravel()])
        hyp = side + [x, 0, 0]
        hyp[:, 2] = np.maximum(hyp[:, 2], 0.01)
        hyp[0] = [x, 0.0, z]
        m = _make_model(0, [Facet("o", side, (-1, 0, 0))], [Facet("h", hyp, (1, 0, 0), Origin.HYPOTHESIZED)])
        assert above_support(m) is ok

    def test_poking_into_free(self):
        vs = slab_space((-0.1, -0.1, 0.0), (0.2, 0.2, 0.2), (-0.05, -0.05, 0.0), (0.05, 0.05, 0.1))
        inside = box_model(0, 0.1, (0, 0, 0.05))
        poke = box_model(0, (0.12, 0.1, 0.1), (0.01, 0, 0.05))
        assert check_constraints(joint(inside), [vs])
        assert not check_constraints(joint(poke), [vs])
        assert in_unknown_brute(vs, inside.hypothesized[0].points).all()
        assert not in_unknown_brute(vs, poke.hypothesized[0].points).all()

    def test_statics(self):
        wall = convex_hull(cube_points((0.02, 0.3, 0.2), (0.1, 0, 0.1)))
        assert clear_of_statics(box_model(0, 0.1, (0, 0, 0.05)), [wall])
        assert not clear_of_statics(box_model(0, 0.1, (0.06, 0, 0.05)), [wall])

    def test_pair_cache(self):
        a, b = box_model(0, 0.1, (0, 0, 0.05)), box_model(1, 0.1, (0.095, 0, 0.05))
        cache = {}
        assert not pairs_disjoint([a, b], pair_cache=cache)
        assert list(cache.values()) == [True]
        assert not pairs_disjoint([a, b], pair_cache=cache)

    @given(st.floats(0.0, 0.1), st.floats(0.0, 0.1), st.floats(0.0, 0.05))
    def test_monotone_in_unknown(self, grow_x, grow_y, grow_z):
        m = box_model(0, (0.1, 0.1, 0.08), (0.02, 0, 0.04))
        lo, hi = np.array([-0.05, -0.05, 0.0]), np.array([0.05, 0.05, 0.07])
        small = slab_space((-0.2, -0.2, 0.0), (0.2, 0.2, 0.2), lo, hi)
        big = slab_space((-0.2, -0.2, 0.0), (0.2, 0.2, 0.2), lo - [0, grow_y, 0],
                         hi + [grow_x, 0, grow_z])
        if check_constraints(joint(m), [small]):
            assert check_constraints(joint(m), [big])


class TestPrune:
    def _setup(self):
        vs = slab_space((-0.1, -0.1, 0.0), (0.2, 0.2, 0.2), (-0.05, -0.05, 0.0), (0.05, 0.05, 0.1))
        return vs

    def test_removes_free_space_model(self):
        vs = self._setup()
        good = box_model(0, 0.1, (0, 0, 0.05))
        bad = box_model(0, (0.14, 0.1, 0.1), (0.02, 0, 0.05))
        (out,) = prune_hypotheses([HypothesisSet(0, [good, bad])], [vs])
        assert out.models == [good]

    def test_all_valid_unchanged(self):
        vs = self._setup()
        ms = [box_model(0, (0.1, 0.1, h), (0, 0, 0.1 - h / 2)) for h in (0.02, 0.05, 0.1)]
        (out,) = prune_hypotheses([HypothesisSet(0, ms)], [vs])
        assert out.models == ms

    def test_only_minimum_survives(self):
        vs = slab_space((-0.1, -0.1, 0.0), (0.2, 0.2, 0.2), (-0.05, -0.05, 0.09), (0.05, 0.05, 0.1))
        part = PartialObject(0, [box_model(0, (0.1, 0.1, 0.01), (0, 0, 0.095)).observed[0]])
        mn = minimum_shape(part)
        big = [box_model(0, (0.1, 0.1, h), (0, 0, 0.1 - h / 2)) for h in (0.05, 0.08)]
        (out,) = prune_hypotheses([HypothesisSet(0, [mn] + big)], [vs])
        assert out.models == [mn]

    def test_all_pruned_reinstates_minimum(self):
        vs = slab_space((-0.1, -0.1, 0.0), (0.2, 0.2, 0.2), (1, 1, 1), (1.1, 1.1, 1.1))
        ms = [box_model(0, 0.1, (0, 0, 0.05)), box_model(0, 0.08, (0, 0, 0.04))]
        (out,) = prune_hypotheses([HypothesisSet(0, ms)], [vs])
        assert len(out) == 1 and out.models[0] is ms[1]

    @given(st.floats(0.01, 0.1), st.floats(0.02, 0.15))
    def test_minimum_always_passes(self, depth, size):
        part = PartialObject(0, [box_model(0, (size, size, 0.01), (0, 0, 0.1)).observed[0]])
        h = size / 2
        vs = slab_space((-0.1, -0.1, 0.0), (0.2, 0.2, 0.2), (-h, -h, 0.1 - depth), (h, h, 0.1))
        mn = minimum_shape(part)
        hidden = HiddenSpace(vs, [part])
        assert check_constraints(joint(mn), hidden)
