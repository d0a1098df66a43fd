import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipr.harness.fixtures import book_push_scene, extent_models
from ipr.harness.scenes import PALETTE, SceneObject, SyntheticScene, capture, default_camera, observe_sequence
from ipr.hypothesis import HypothesisSet, ObjectModel, signature
from ipr.inference import (Engine, InferenceConfig, NoValidModels, PosteriorTable, PriorSpec, RolloutState,
                           TooLarge, compute_exploration_probs, exhaustive_posterior, infer,
                           interaction_groups, rollout, rollout_rng, score_and_update, select_map_models)
from ipr.simulator.world import PushAction, RigidBody, World, box_mesh, settle

TABLE = [((0.0, 0.0, 1.0), 0.0)]


def box_model(oid, lo, hi, is_min=False):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    hull = box_mesh(hi - lo, (lo + hi) / 2)
    return ObjectModel(oid, [], [], hull, hull.volume, signature(hull), is_min)


def frames_of(*meshes, actions=(), stride=3):
    """Ground-truth frames of the meshes after they come to rest."""
    scene = SyntheticScene([SceneObject(m, PALETTE[k]) for k, m in enumerate(meshes)], default_camera(),
                           list(actions))
    w = scene.world()
    settle(w, min_time=InferenceConfig().settle_min_time)
    return observe_sequence(scene, world=w, stride=stride)


@pytest.fixture(scope="module")
def stack():
    """A base box with a smaller box on top; models differ in how far down they reach."""
    base = [box_model(0, (-0.04, -0.04, 0.05), (0.04, 0.04, 0.06), True),
            box_model(0, (-0.04, -0.04, 0.02), (0.04, 0.04, 0.06)),
            box_model(0, (-0.04, -0.04, 0.0), (0.04, 0.04, 0.06)),
            box_model(0, (-0.04, -0.04, -0.02), (0.04, 0.04, 0.06))]      # sinks into the table
    top = [box_model(1, (-0.03, -0.03, 0.095), (0.03, 0.03, 0.1), True),
           box_model(1, (-0.03, -0.03, 0.08), (0.03, 0.03, 0.1)),
           box_model(1, (-0.03, -0.03, 0.06), (0.03, 0.03, 0.1)),
           box_model(1, (-0.03, -0.03, 0.04), (0.03, 0.03, 0.1))]        # reaches into the base
    sets = [HypothesisSet(0, base), HypothesisSet(1, top)]
    obs = frames_of(base[2].hull, top[2].hull)
    return sets, obs


@pytest.fixture(scope="module")
def pair():
    """Two touching boxes pushed together; three hidden-depth variants each."""
    def variants(oid, x0, x1):
        return [box_model(oid, (x0, -0.03, 0.0), (x1, y1, 0.05), k == 0)
                for k, y1 in enumerate((0.0, 0.03, 0.06))]
    sets = [HypothesisSet(0, variants(0, -0.06, 0.0)), HypothesisSet(1, variants(1, 0.0, 0.06))]
    push = PushAction((-0.075, 0.0, 0.025), (1, 0, 0), 0.8)
    obs = frames_of(sets[0].models[1].hull, sets[1].models[1].hull, actions=[push])
    return sets, obs, [push]


class TestPrior:
    def test_size_formula(self):
        p = PriorSpec("size", 2.0).probabilities([1.0, 2.0, 3.0])
        raw = np.exp(-2.0 * np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(p, raw / raw.sum(), rtol=1e-9)

    def test_renormalized_over_valid(self):
        p = PriorSpec().probabilities([1, 2, 3], [True, False, True])
        np.testing.assert_allclose(p, [0.5, 0.0, 0.5])

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            PriorSpec("beta")

    @given(st.lists(st.floats(1e-6, 1e-2), min_size=2, max_size=8), st.floats(0.1, 5.0))
    def test_size_monotone(self, vols, beta):
        p = PriorSpec("size", beta).probabilities(vols)
        assert math.isclose(p.sum(), 1.0, abs_tol=1e-12)
        order = np.argsort(vols)
        assert np.all(np.diff(p[order]) <= 1e-15)


class TestExploration:
    def test_base_selected_first(self, stack):
        sets, obs = stack
        eng = Engine(sets, None, obs)
        table, k = compute_exploration_probs(RolloutState.empty(2), eng)
        assert k == 0
        # oracle: direct settle calls on the staged worlds
        raw = []
        for j, m in enumerate(sets[0].models):
            if j == 3:
                raw.append(0.0)
                continue
            w = World([RigidBody.from_mesh(0, m.hull), RigidBody.from_mesh(1, sets[1].models[0].hull)], TABLE)
            _, disp = settle(w, min_time=eng.cfg.settle_min_time)
            raw.append(math.exp(-eng.cfg.alpha_explore * disp[0]))
        raw = np.array(raw)
        p = raw / raw.sum()
        nz = raw > 0
        p = 0.95 * p + 0.05 * nz / nz.sum()
        np.testing.assert_allclose(table.row(0), p, atol=1e-9)
        assert table.mass[0] > table.mass[1]

    def test_violating_model_zero(self, stack):
        sets, obs = stack
        table, _ = compute_exploration_probs(RolloutState.empty(2), Engine(sets, None, obs))
        assert table.row(0)[3] == 0.0
        assert table.row(1)[3] == 0.0

    def test_single_stable_object_uniform(self):
        ms = [box_model(0, (0, 0, 0), (0.05, 0.05, h)) for h in (0.03, 0.05, 0.07)]
        eng = Engine([HypothesisSet(0, ms)])
        table, k = compute_exploration_probs(RolloutState.empty(1), eng)
        np.testing.assert_allclose(table.row(0), 1 / 3, atol=1e-3)

    def test_all_zero_row_places_minimum(self):
        a = [box_model(0, (0, 0, 0), (0.06, 0.06, 0.06), True)]
        b = [box_model(1, (0.03, 0, 0), (0.09, 0.06, 0.06), True),
             box_model(1, (0.02, 0, 0), (0.09, 0.06, 0.06))]
        eng = Engine([HypothesisSet(0, a), HypothesisSet(1, b)])
        x, q = rollout(eng, rollout_rng(0, 0))
        assert x.key == (0, 0) and q == {0: 1.0, 1: 1.0}
        with pytest.raises(NoValidModels):
            exhaustive_posterior([HypothesisSet(0, a), HypothesisSet(1, b)])

    def test_minimum_reinstated_when_all_invalid(self):
        sunk = [box_model(0, (0, 0, -0.02), (0.05, 0.05, 0.05), True),
                box_model(0, (0, 0, -0.03), (0.05, 0.05, 0.05))]
        eng = Engine([HypothesisSet(0, sunk)])
        assert eng.valid[0].tolist() == [True, False]
        with pytest.raises(NoValidModels):
            Engine([HypothesisSet(0, sunk[1:])])

    def test_tie_rule(self):
        sets = [HypothesisSet(k, [box_model(k, (0.2 * k, 0, 0), (0.2 * k + 0.05, 0.05, 0.05), True)])
                for k in range(3)]
        _, k = compute_exploration_probs(RolloutState.empty(3), Engine(sets))
        assert k == 2
        _, k = compute_exploration_probs(RolloutState.empty(3),
                                         Engine(sets, cfg=InferenceConfig(later_index_wins=False)))
        assert k == 0


class TestRollout:
    def test_single_model(self):
        eng = Engine([HypothesisSet(0, [box_model(0, (0, 0, 0), (0.05, 0.05, 0.05), True)])])
        x, q = rollout(eng, rollout_rng(0, 0))
        assert x.key == (0,) and q == {0: 1.0}

    def test_reproducible(self, stack):
        sets, obs = stack
        eng = Engine(sets, None, obs)
        a = [rollout(eng, rollout_rng(3, r))[0].key for r in range(20)]
        b = [rollout(Engine(sets, None, obs), rollout_rng(3, r))[0].key for r in range(20)]
        assert a == b

    def test_frequencies_match_table(self, stack):
        sets, obs = stack
        eng = Engine(sets, None, obs)
        n = 10_000
        counts = Counter(eng.rollout(rollout_rng(11, r))[0] for r in range(n))
        # exact draw probability of every joint key from the staged tables
        table, first = eng.exploration(RolloutState.empty(2))
        second = 1 - first
        expect = {}
        for j1, p1 in enumerate(table.row(first)):
            if p1 == 0:
                continue
            st_ = RolloutState([False, False], [-1, -1], 2)
            st_.placed[first], st_.model[first] = True, j1
            t2, _ = eng.exploration(st_)
            for j2, p2 in enumerate(t2.row(second)):
                key = [0, 0]
                key[first], key[second] = j1, j2
                expect[tuple(key)] = expect.get(tuple(key), 0.0) + p1 * p2
        for key in set(expect) | set(counts):
            assert abs(counts.get(key, 0) / n - expect.get(key, 0.0)) < 0.02


class TestScoring:
    def test_perfect_model(self, stack):
        sets, obs = stack
        eng = Engine(sets, None, obs)
        d = eng.distances((2, 2))
        assert all(v < 1e-9 for v in d.values())
        q = {0: 0.5, 1: 0.25}
        lw = eng.log_weight((2, 2), q)
        assert lw[0] == pytest.approx(math.log(eng.prior[0][2] * eng.prior[1][2] / (0.5 * 0.25)))

    def test_accumulator(self, stack):
        sets, obs = stack
        eng = Engine(sets, None, obs)
        acc = score_and_update(eng, (2, 2), {0: 1.0, 1: 1.0}, [])
        assert acc[0][0] == (2, 2) and set(acc[0][1]) == {0, 1}

    def test_matches_exhaustive(self, pair):
        sets, obs, acts = pair
        cfg = InferenceConfig(rollouts=2000, seed=1, frame_stride=3)
        eng = Engine(sets, None, obs, acts, cfg)
        ex = exhaustive_posterior(sets, cfg=cfg, engine=eng)
        est = infer(sets, cfg=cfg, engine=eng)
        assert max(est.total_variation(ex).values()) <= 0.05


class TestInfer:
    def test_rows_normalized_and_zero_prior(self, stack):
        sets, obs = stack
        tab = infer(sets, None, obs, cfg=InferenceConfig(rollouts=50))
        for oid in tab.object_ids:
            assert math.isclose(tab.row(oid).sum(), 1.0, abs_tol=1e-9)
            assert np.all(tab.row(oid) >= 0)
        assert tab.row(0)[3] == 0.0

    def test_recovers_stack(self, stack):
        sets, obs = stack
        tab = infer(sets, None, obs, cfg=InferenceConfig(rollouts=100))
        assert select_map_models(tab, sets).key == (2, 2)

    def test_deterministic(self, stack):
        sets, obs = stack
        cfg = InferenceConfig(rollouts=40, seed=5)
        a = infer(sets, None, obs, cfg=cfg)
        b = infer(sets, None, obs, cfg=cfg)
        assert a.to_json() == b.to_json()

    def test_parallel_equals_serial(self, stack):
        sets, obs = stack
        cfg = InferenceConfig(rollouts=30, seed=2)
        assert infer(sets, None, obs, cfg=cfg).to_json() == infer(sets, None, obs, cfg=cfg, jobs=2).to_json()

    def test_zero_rollouts_is_prior(self, stack):
        sets, obs = stack
        tab = infer(sets, None, obs, cfg=InferenceConfig(rollouts=0))
        np.testing.assert_allclose(tab.row(0), [1 / 3, 1 / 3, 1 / 3, 0.0])

    def test_static_cube_ranks_stable(self):
        cube = box_mesh((0.06, 0.06, 0.06), (0, 0, 0.03))
        ms = [box_model(0, (-0.03, -0.03, 0.05), (0.03, 0.03, 0.06), True),
              box_model(0, (-0.03, -0.03, 0.0), (0.03, 0.03, 0.06))]
        obs = frames_of(cube)
        cfg = InferenceConfig(rollouts=60, simulate_actions=False)
        tab = infer([HypothesisSet(0, ms)], None, obs, cfg=cfg)
        disp = []
        for m in ms:
            _, d = settle(World([RigidBody.from_mesh(0, m.hull)], TABLE))
            disp.append(d[0])
        assert np.argmax(tab.row(0)) == int(np.argmin(disp))

    def test_json_round_trip(self, stack):
        sets, obs = stack
        tab = infer(sets, None, obs, cfg=InferenceConfig(rollouts=10))
        back = PosteriorTable.from_json(tab.to_json())
        for oid in tab.object_ids:
            np.testing.assert_allclose(back.row(oid), tab.row(oid))

    def test_size_prior_with_equal_likelihood(self):
        # no observations: every admissible model explains the data equally well
        ms = [box_model(0, (0, 0, 0), (0.05, 0.05, h)) for h in (0.02, 0.04, 0.08)]
        tab = infer([HypothesisSet(0, ms)], cfg=InferenceConfig(rollouts=200, prior=PriorSpec("size")))
        assert np.all(np.diff(tab.row(0)) <= 1e-12)


class TestExhaustive:
    def test_single_object_direct(self, stack):
        sets, obs = stack
        eng = Engine([sets[0]], None, obs[:1])
        ex = exhaustive_posterior([sets[0]], engine=eng)
        s = np.array([eng.joint_log_score((j,)) for j in range(4)])
        w = np.exp(s - s[np.isfinite(s)].max())
        np.testing.assert_allclose(ex.row(0), w / w.sum(), atol=1e-12)

    def test_only_minimum_valid(self):
        a = [box_model(0, (0, 0, 0), (0.06, 0.06, 0.06), True), box_model(0, (0, 0, -0.03), (0.06, 0.06, 0.06))]
        ex = exhaustive_posterior([HypothesisSet(0, a)])
        np.testing.assert_allclose(ex.row(0), [1.0, 0.0])

    def test_too_large(self):
        sets = [HypothesisSet(k, [box_model(k, (0.2 * k, 0, 0), (0.2 * k + 0.05, 0.05, 0.01 * (j + 1)))
                                  for j in range(11)]) for k in range(4)]
        with pytest.raises(TooLarge):
            exhaustive_posterior(sets)


class TestMap:
    def test_single(self):
        m = box_model(0, (0, 0, 0), (0.05, 0.05, 0.05), True)
        tab = PosteriorTable([0], [np.array([1.0])], [[m.signature]], [[m.volume]])
        assert select_map_models(tab, [HypothesisSet(0, [m])]).models[0] is m

    def test_uniform_smallest(self):
        ms = [box_model(0, (0, 0, 0), (0.05, 0.05, h)) for h in (0.06, 0.02, 0.04)]
        tab = PosteriorTable([0], [np.full(3, 1 / 3)], [[m.signature for m in ms]], [[m.volume for m in ms]])
        assert select_map_models(tab, [HypothesisSet(0, ms)]).key == (1,)


class TestGroups:
    def _set(self, k, x):
        return HypothesisSet(k, [box_model(k, (x, 0, 0), (x + 0.05, 0.05, 0.05), True)])

    def test_far_apart(self):
        sets = [self._set(0, 0.0), self._set(1, 0.3)]
        assert interaction_groups(sets) == [[0], [1]]

    def test_touching(self):
        sets = [self._set(0, 0.0), self._set(1, 0.055)]
        assert interaction_groups(sets) == [[0, 1]]

    def test_push_sweep_merges(self):
        sets = [self._set(0, 0.0), self._set(1, 0.1)]
        push = PushAction((-0.02, 0.025, 0.025), (1, 0, 0), 2.0)
        assert interaction_groups(sets) == [[0], [1]]
        assert interaction_groups(sets, [push]) == [[0, 1]]

    def test_image_overlap_merges(self):
        sets = [self._set(0, 0.0), self._set(1, 0.3)]
        cam = default_camera()
        # a viewpoint on the line through both boxes sees one behind the other
        from ipr.simulator.render import Camera
        inline = Camera.look_at((-0.4, 0.025, 0.03), (0.3, 0.025, 0.03))
        assert interaction_groups(sets, camera=inline) == [[0, 1]]
        assert interaction_groups(sets, camera=cam) == [[0], [1]]

    def test_estimators_agree_when_independent(self):
        sets = [self._set(0, 0.0), self._set(1, 0.3)]
        for s in sets:
            s.models.append(box_model(s.object_id, s.models[0].hull.bounds[0] + [0, 0, 0.02],
                                      s.models[0].hull.bounds[1]))
        obs = frames_of(sets[0].models[0].hull, sets[1].models[0].hull)
        rows = []
        for est in ("grouped", "per_object"):
            tab = infer(sets, None, obs, cfg=InferenceConfig(rollouts=30, estimator=est))
            rows.append([tab.row(0), tab.row(1)])
        np.testing.assert_allclose(rows[0], rows[1], atol=1e-12)

    def test_bad_estimator(self):
        with pytest.raises(ValueError):
            InferenceConfig(estimator="mixed")


def test_action_sharpens_book_posterior():
    sc = book_push_scene()
    cap = capture(sc, seed=0)
    cut = cap.points[cap.labels == 0][:, 1].max()
    hs = extent_models(sc, cut)
    obs = observe_sequence(sc, stride=3)
    ent = {}
    for act in (True, False):
        cfg = InferenceConfig(simulate_actions=act, frame_stride=3)
        ex = exhaustive_posterior([hs], None, obs, sc.actions, cfg, sc.planes, sc.statics)
        ent[act] = ex.entropy(0)
    assert ent[True] <= ent[False]
