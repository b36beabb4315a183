import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import learned_from, random_mdp, single_state
from lipschitz_rmax import dp
from lipschitz_rmax.mdp import KnownSet, LearnedTask, TabularMdp
from lipschitz_rmax.metrics import (
    KK,
    KU,
    UK,
    UU,
    DistanceConfig,
    DmaxEstimate,
    combine_bounds,
    dhat_dissimilarity,
    dhat_model,
    dhat_model_table,
    dmax_confident,
    dmax_update,
    exact_dissimilarity,
    global_dissimilarity,
    lipschitz_q_bound,
    max_transition_gap,
    model_pseudometric,
    model_pseudometric_table,
)

MASKS = {
    "K&K": (True, True),
    "K&~K": (True, False),
    "~K&K": (False, True),
    "~K&~K": (False, False),
}


def unknown_task(S, A, gamma=0.9, v_max=None):
    loops = np.zeros((S, A, S))
    loops[np.arange(S), :, np.arange(S)] = 1.0
    v_max = 1 / (1 - gamma) if v_max is None else v_max
    return LearnedTask(TabularMdp(np.ones((S, A)), loops, gamma), KnownSet.empty(S, A), np.full((S, A), v_max))


class TestPseudometric:
    def test_identity(self):
        m = random_mdp(np.random.default_rng(0), 3, 2)
        assert model_pseudometric(m, m, np.ones(3), 1, 1) == 0.0

    def test_reward_gap_only(self):
        m = random_mdp(np.random.default_rng(1), 3, 2)
        R = m.reward.copy()
        R[0, 0] = R[0, 0] + 0.2 if R[0, 0] < 0.8 else R[0, 0] - 0.2
        other = TabularMdp(R, m.transition, 0.9)
        for f in (np.zeros(3), np.full(3, 7.0)):
            assert model_pseudometric(m, other, f, 0, 0) == pytest.approx(0.2)

    def test_transition_gap(self):
        T1 = np.array([[[0.5, 0.5, 0.0]]] * 3)
        T2 = np.array([[[0.3, 0.5, 0.2]]] * 3)
        R = np.zeros((3, 1))
        d = model_pseudometric(TabularMdp(R, T1, 0.9), TabularMdp(R, T2, 0.9), np.ones(3), 0, 0)
        assert d == pytest.approx(0.4)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            model_pseudometric(random_mdp(rng, 3, 2), random_mdp(rng, 4, 2), np.ones(3), 0, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_triangle_inequality(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_mdp(rng, 3, 2) for _ in range(3))
        f = rng.uniform(0, 10, size=3)
        ab = model_pseudometric_table(a.reward, a.transition, b.reward, b.transition, f)
        bc = model_pseudometric_table(b.reward, b.transition, c.reward, c.transition, f)
        ac = model_pseudometric_table(a.reward, a.transition, c.reward, c.transition, f)
        ba = model_pseudometric_table(b.reward, b.transition, a.reward, a.transition, f)
        assert np.all(ac <= ab + bc + 1e-12)
        np.testing.assert_allclose(ab, ba)


class TestExactDissimilarity:
    def test_identical(self):
        m = random_mdp(np.random.default_rng(3), 4, 2)
        np.testing.assert_array_equal(exact_dissimilarity(m, m), 0.0)

    def test_single_state_closed_form(self):
        d = exact_dissimilarity(single_state(0.7), single_state(0.2), eps_q=1e-6)
        assert d[0, 0] == pytest.approx(5.0, abs=1e-5)
        assert global_dissimilarity(single_state(0.7), single_state(0.2), 1e-6) == pytest.approx(5.0)

    def test_bounds_q_gap(self):
        rng = np.random.default_rng(4)
        eps = 1e-3
        for _ in range(50):
            m, mb = random_mdp(rng), random_mdp(rng)
            gap = np.abs(dp.value_iteration(m, eps) - dp.value_iteration(mb, eps))
            d = np.minimum(exact_dissimilarity(m, mb, eps), exact_dissimilarity(mb, m, eps))
            assert np.all(gap <= d + 3 * eps)

    def test_bounds_q_gap_nearby_tasks(self):
        # nearby tasks keep the bound within about one unit of the gap, where
        # independent pairs leave tens of units of room
        rng = np.random.default_rng(40)
        eps = 1e-4
        for _ in range(50):
            m = random_mdp(rng)
            R = np.clip(m.reward + rng.normal(0, 0.02, m.reward.shape), 0, 1)
            T = m.transition + rng.uniform(0, 0.02, m.transition.shape)
            mb = TabularMdp(R, T / T.sum(axis=2, keepdims=True), 0.9)
            gap = np.abs(dp.value_iteration(m, eps) - dp.value_iteration(mb, eps))
            d = np.minimum(exact_dissimilarity(m, mb, eps), exact_dissimilarity(mb, m, eps))
            assert np.all(gap <= d + 3 * eps)

    def test_global_dominates_local(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m, mb = random_mdp(rng), random_mdp(rng)
            g = min(global_dissimilarity(m, mb), global_dissimilarity(mb, m))
            d = np.minimum(exact_dissimilarity(m, mb), exact_dissimilarity(mb, m))
            assert g >= d.max() - 1e-3


class TestTransitionGap:
    def test_exact_is_vertex_max(self):
        rng = np.random.default_rng(6)
        P = rng.dirichlet(np.ones(5), size=20)
        V = rng.uniform(0, 10, size=5)
        vertex = np.array([[V @ np.abs(p - np.eye(5)[k]) for k in range(5)] for p in P]).max(axis=1)
        np.testing.assert_allclose(max_transition_gap(P, V, "exact"), vertex)
        # no random distribution does better than the best vertex
        for t in rng.dirichlet(np.ones(5), size=200):
            assert np.all(np.abs(P - t) @ V <= vertex + 1e-12)

    def test_ordering_of_methods(self):
        rng = np.random.default_rng(7)
        P = rng.dirichlet(np.ones(6) * 0.3, size=50)
        V = rng.uniform(0, 10, size=6)
        exact = max_transition_gap(P, V, "exact")
        assert np.all(max_transition_gap(P, V, "greedy") <= exact + 1e-12)
        assert np.all(max_transition_gap(P, V, "loose") >= exact - 1e-12)

    def test_greedy_can_fall_short(self):
        # greedy stops at the best state (mass exactly 1/2, worth 0), while
        # the vertex on the untouched third state is worth V = 1
        P = np.array([0.5, 0.5, 0.0])
        V = np.array([10.0, 9.0, 1.0])
        assert max_transition_gap(P, V, "greedy") < max_transition_gap(P, V, "exact")


class TestDhatModel:
    cfg = DistanceConfig(epsilon=0.01)

    def test_unknown_unknown_is_19(self):
        u = unknown_task(3, 2, v_max=10.0)
        assert dhat_model(u, u, self.cfg, 0, 0) == 19.0
        values, cases = dhat_model_table(u, u, self.cfg)
        assert np.all(values == 19.0) and np.all(cases == UU)

    def test_unknown_unknown_formula(self):
        u = unknown_task(3, 2)
        values, _ = dhat_model_table(u, u, self.cfg)
        assert np.all(values == 1 + 2 * 0.9 * u.v_max)

    def test_identical_known_is_2B(self):
        m = random_mdp(np.random.default_rng(8), 3, 2)
        t = learned_from(m)
        q = np.full((3, 2), 10.0)
        t = LearnedTask(t.model, t.known, q)  # v_max = 10
        values, cases = dhat_model_table(t, t, self.cfg)
        np.testing.assert_allclose(values, 0.2)
        assert np.all(cases == KK)

    def test_known_unknown_example(self):
        # src known at (0, 0) with reward 0.3 and a deterministic move to
        # state 1; dst fully unknown so every state has V = 10
        T = np.zeros((3, 1, 3))
        T[0, 0, 1] = 1.0
        T[1, 0, 1] = T[2, 0, 2] = 1.0
        R = np.array([[0.3], [1.0], [1.0]])
        mask = np.array([[True], [False], [False]])
        src = LearnedTask(TabularMdp(R, T, 0.9), KnownSet.from_mask(mask), np.full((3, 1), 10.0))
        dst = unknown_task(3, 1)
        cfg = DistanceConfig(epsilon=0.0)
        # 0.7 + gamma * (V(1) + max over the other states of V) = 0.7 + 0.9 * 20
        assert dhat_model(src, dst, cfg, 0, 0) == pytest.approx(18.7)
        assert dhat_model(dst, src, cfg, 0, 0) == pytest.approx(18.7)
        _, cases = dhat_model_table(src, dst, cfg)
        assert cases[0, 0] == KU and cases[1, 0] == UU
        _, cases = dhat_model_table(dst, src, cfg)
        assert cases[0, 0] == UK

    def test_cap(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
            b = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
            values, _ = dhat_model_table(a, b, self.cfg)
            assert np.all(values <= 1 + 2 * 0.9 * b.v_max + 1e-12)

    @pytest.mark.parametrize("case", list(MASKS))
    def test_dominates_pseudometric(self, case):
        rng = np.random.default_rng(10)
        ks, kd = MASKS[case]
        for _ in range(40):
            m = random_mdp(rng, deterministic=True)
            mb = random_mdp(rng, deterministic=True)
            src = learned_from(m, np.full((4, 2), ks))
            dst = learned_from(mb, np.full((4, 2), kd))
            f = 0.9 * dp.value_iteration(mb, 1e-6).max(axis=1)
            truth = model_pseudometric_table(m.reward, m.transition, mb.reward, mb.transition, f)
            values, _ = dhat_model_table(src, dst, self.cfg)
            assert np.all(values >= truth - 1e-9)

    def test_dominates_with_mixed_masks(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            m, mb = random_mdp(rng, deterministic=True), random_mdp(rng, deterministic=True)
            src = learned_from(m, rng.random((4, 2)) < 0.5)
            dst = learned_from(mb, rng.random((4, 2)) < 0.5)
            f = 0.9 * dp.value_iteration(mb, 1e-6).max(axis=1)
            truth = model_pseudometric_table(m.reward, m.transition, mb.reward, mb.transition, f)
            assert np.all(dhat_model_table(src, dst, self.cfg)[0] >= truth - 1e-9)

    def test_monotone_in_known_sets(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            m, mb = random_mdp(rng), random_mdp(rng)
            full_s, full_d = learned_from(m), learned_from(mb)
            small = rng.random((4, 2)) < 0.4
            large = small | (rng.random((4, 2)) < 0.5)

            def task(full, mask):
                # same empirical values, only the known flags change
                return LearnedTask(full.model, KnownSet.from_mask(mask), full.q_bound)

            base, _ = dhat_model_table(task(full_s, small), task(full_d, small), self.cfg)
            more_src, _ = dhat_model_table(task(full_s, large), task(full_d, small), self.cfg)
            more_dst, _ = dhat_model_table(task(full_s, small), task(full_d, large), self.cfg)
            assert np.all(more_src <= base + 1e-12)
            assert np.all(more_dst <= base + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dhat_model_table(unknown_task(3, 2), unknown_task(4, 2), self.cfg)


class TestDhatDissimilarity:
    def test_fully_unknown(self):
        u = unknown_task(3, 2)
        d = dhat_dissimilarity(u, u, DistanceConfig(epsilon=0.01), eps_q=1e-6)
        np.testing.assert_allclose(d, 190.0, atol=1e-5)

    def test_zero_prior(self):
        u = unknown_task(3, 2)
        np.testing.assert_array_equal(dhat_dissimilarity(u, u, DistanceConfig(d_prior=0.0)), 0.0)

    def test_known_self_loop(self):
        src = learned_from(single_state(0.3))
        dst = learned_from(single_state(0.8))
        # local term at eps = 0 is |0.3 - 0.8| = 0.5 with identical loops
        d = dhat_dissimilarity(src, dst, DistanceConfig(epsilon=0.0), eps_q=1e-6)
        assert d[0, 0] == pytest.approx(5.0, abs=1e-5)

    def test_modulus_condition(self):
        u = unknown_task(2, 1, gamma=0.95)
        with pytest.raises(dp.ContractionError):
            dhat_dissimilarity(u, u, DistanceConfig(epsilon=0.1))

    def test_dominates_exact(self):
        rng = np.random.default_rng(13)
        cfg = DistanceConfig(epsilon=0.01)
        for _ in range(60):
            m, mb = random_mdp(rng, deterministic=True), random_mdp(rng, deterministic=True)
            src = learned_from(m, rng.random((4, 2)) < 0.6)
            dst = learned_from(mb, rng.random((4, 2)) < 0.6)
            exact = exact_dissimilarity(m, mb, 1e-6)
            assert np.all(dhat_dissimilarity(src, dst, cfg, eps_q=1e-6) >= exact - 1e-5)

    def test_min_over_directions_is_symmetric(self):
        rng = np.random.default_rng(14)
        cfg = DistanceConfig()
        a = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
        b = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
        ab = np.minimum(dhat_dissimilarity(a, b, cfg), dhat_dissimilarity(b, a, cfg))
        ba = np.minimum(dhat_dissimilarity(b, a, cfg), dhat_dissimilarity(a, b, cfg))
        np.testing.assert_array_equal(ab, ba)


class TestBounds:
    def test_zero_distance(self):
        src = learned_from(random_mdp(np.random.default_rng(15)))
        z = np.zeros((4, 2))
        np.testing.assert_array_equal(lipschitz_q_bound(src, z, z), src.q_bound)

    def test_constant(self):
        src = LearnedTask(single_state(0.5).__class__(np.zeros((2, 1)), np.ones((2, 1, 2)) / 2, 0.9),
                          KnownSet.empty(2, 1), np.full((2, 1), 5.0))
        out = lipschitz_q_bound(src, np.full((2, 1), 3.0), np.full((2, 1), 2.0))
        np.testing.assert_array_equal(out, 7.0)

    def test_never_below_source(self):
        rng = np.random.default_rng(16)
        src = learned_from(random_mdp(rng))
        d1, d2 = rng.uniform(0, 5, size=(2, 4, 2))
        assert np.all(lipschitz_q_bound(src, d1, d2) >= src.q_bound)

    def test_negative_distance_rejected(self):
        src = learned_from(single_state(0.5))
        with pytest.raises(ValueError):
            lipschitz_q_bound(src, -np.ones((1, 1)), np.ones((1, 1)))

    def test_combine(self):
        np.testing.assert_array_equal(combine_bounds([], 0.9, (2, 2)), 1 / (1 - 0.9))
        np.testing.assert_array_equal(combine_bounds([np.full((2, 2), 7.0)], 0.9), 7.0)
        np.testing.assert_array_equal(combine_bounds([np.full((2, 2), 7.0), np.full((2, 2), 12.0)], 0.9), 7.0)


class TestDmax:
    def test_identical_known_pair(self):
        t = learned_from(random_mdp(np.random.default_rng(17), 3, 2))
        t = LearnedTask(t.model, t.known, np.full((3, 2), 10.0))
        est = dmax_update(DmaxEstimate.empty(3, 2), t, t, DistanceConfig(epsilon=0.01))
        np.testing.assert_allclose(est.values, 0.2)
        again = dmax_update(est, t, t, DistanceConfig(epsilon=0.01))
        np.testing.assert_array_equal(again.values, est.values)

    def test_running_max(self):
        rng = np.random.default_rng(18)
        cfg = DistanceConfig()
        a, b = learned_from(random_mdp(rng)), learned_from(random_mdp(rng))
        est = dmax_update(DmaxEstimate.empty(4, 2), a, b, cfg)
        expected = np.maximum(dhat_model_table(a, b, cfg)[0], dhat_model_table(b, a, cfg)[0])
        np.testing.assert_array_equal(est.values, expected)
        closer = dmax_update(est, a, a, cfg)
        np.testing.assert_array_equal(closer.values, est.values)

    def test_seen_task_counter(self):
        est = DmaxEstimate.empty(2, 2).seen_task().seen_task()
        assert est.tasks_seen == 2

    @pytest.mark.parametrize("p_min,m", [(0.5, 6), (0.2, 17)])
    def test_confidence_threshold(self, p_min, m):
        assert dmax_confident(m, p_min, 0.05)
        assert not dmax_confident(m - 1, p_min, 0.05)

    def test_zero_tasks(self):
        assert not dmax_confident(0, 0.3, 0.5)

    def test_online_clip_applies_after_confidence(self):
        rng = np.random.default_rng(19)
        a = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
        b = learned_from(random_mdp(rng), rng.random((4, 2)) < 0.5)
        cfg = DistanceConfig(epsilon=0.01, use_online_dmax=True, p_min=0.5)
        est = DmaxEstimate(np.full((4, 2), 0.5), tasks_seen=6, n_updates=1)
        d = dhat_dissimilarity(a, b, cfg, est, eps_q=1e-6)
        # local term clipped to 0.51 everywhere
        assert d.max() <= 0.51 / (1 - 0.9 * 1.01) + 1e-5
        early = DmaxEstimate(np.full((4, 2), 0.5), tasks_seen=5, n_updates=1)
        np.testing.assert_array_equal(dhat_dissimilarity(a, b, cfg, early), dhat_dissimilarity(a, b, DistanceConfig()))
