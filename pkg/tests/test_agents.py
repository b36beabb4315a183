import numpy as np
import pytest

from helpers import chain_mdp, learned_from, random_mdp, single_state
from lipschitz_rmax import dp
from lipschitz_rmax.agents import Agent, AgentConfig, TaskLibrary, maxqinit_bound, maxqinit_threshold
from lipschitz_rmax.lifelong import _Env
from lipschitz_rmax.mdp import KnownSet, LearnedTask
from lipschitz_rmax.metrics import DistanceConfig

CEILING = 1 / (1 - 0.9)


def lrmax(**kw):
    return AgentConfig(variant="lrmax", distance=DistanceConfig(**kw))


def run_episodes(agent, mdp, rng, n_episodes, length, check=None):
    env = _Env(mdp, rng)
    agent.new_task(mdp.n_states, mdp.n_actions, mdp.initial_state)
    actions = []
    for _ in range(n_episodes):
        s = mdp.initial_state
        for _ in range(length):
            a = agent.act(s)
            actions.append(a)
            r, s2 = env.step(s, a)
            prev = agent.q.copy()
            fired = agent.observe(s, a, r, s2)
            if check is not None:
                check(agent, prev, fired)
            s = s2
    return actions


class TestNewTask:
    def test_rmax(self):
        agent = Agent(AgentConfig()).new_task(3, 2)
        np.testing.assert_array_equal(agent.q, CEILING)

    def test_lrmax_empty_library(self):
        agent = Agent(lrmax()).new_task(3, 2)
        np.testing.assert_array_equal(agent.q, CEILING)

    def test_lrmax_identical_prior(self):
        prior = learned_from(random_mdp(np.random.default_rng(0), 3, 2))
        agent = Agent(lrmax(epsilon=0.0, d_prior=0.0), TaskLibrary([prior])).new_task(3, 2)
        np.testing.assert_array_equal(agent.q, prior.q_bound)

    def test_shape_mismatch(self):
        prior = learned_from(random_mdp(np.random.default_rng(0), 3, 2))
        with pytest.raises(ValueError):
            Agent(lrmax(), TaskLibrary([prior])).new_task(4, 2)

    def test_lipschitz_condition(self):
        with pytest.raises(ValueError):
            AgentConfig(variant="lrmax", gamma=0.95, distance=DistanceConfig(epsilon=0.1))


class TestAct:
    def test_tie_break(self):
        agent = Agent(AgentConfig()).new_task(1, 4)
        assert agent.act(0) == 0

    def test_argmax(self):
        agent = Agent(AgentConfig()).new_task(1, 3)
        agent.q = np.array([[1.0, 3.0, 2.0]])
        assert agent.act(0) == 1

    def test_moves_to_known_goal(self):
        m = chain_mdp(goal_reward=1.0)
        agent = Agent(AgentConfig(n_known=1)).new_task(2, 2)
        agent.observe(1, 0, 1.0, 1)
        agent.observe(1, 1, 1.0, 1)
        agent.observe(0, 0, 0.0, 0)
        # (0, 1) still unknown and optimistic: goes there
        assert agent.act(0) == 1
        agent.observe(0, 1, 0.0, 1)
        assert agent.act(0) == 1
        assert agent.q[0, 1] == pytest.approx(0.9 * dp.value_iteration(m, 1e-6)[1, 0], abs=2e-3)


class TestObserve:
    def test_threshold_event(self):
        agent = Agent(AgentConfig()).new_task(2, 2)
        fired = [agent.observe(0, 1, 0.5, 1) for _ in range(10)]
        assert fired == [False] * 9 + [True]
        assert agent.stats.n_updates == 1
        assert agent.r_hat[0, 1] == 0.5
        assert agent.t_hat[0, 1, 1] == 1.0

    def test_known_pair_frozen(self):
        agent = Agent(AgentConfig(n_known=2)).new_task(2, 1)
        agent.observe(0, 0, 0.2, 1)
        agent.observe(0, 0, 0.2, 1)
        before = (agent.r_hat.copy(), agent.t_hat.copy())
        assert agent.observe(0, 0, 0.9, 0) is False
        np.testing.assert_array_equal(agent.r_hat, before[0])
        np.testing.assert_array_equal(agent.t_hat, before[1])
        assert agent.acc.n_samples[0, 0] == 2

    def test_reward_range(self):
        agent = Agent(AgentConfig()).new_task(1, 1)
        with pytest.raises(ValueError):
            agent.observe(0, 0, 1.5, 0)


class TestEndTask:
    def test_library_grows(self):
        agent = Agent(AgentConfig(n_known=1)).new_task(1, 1)
        agent.observe(0, 0, 1.0, 0)
        agent.end_task()
        assert len(agent.library) == 1
        # RMax records the task but does not use it
        agent.new_task(1, 1)
        np.testing.assert_array_equal(agent.q, CEILING)

    def test_dmax_two_identical_tasks(self):
        cfg = AgentConfig(variant="lrmax", n_known=1, distance=DistanceConfig(epsilon=0.01, use_online_dmax=True, p_min=0.5))
        agent = Agent(cfg)
        for _ in range(2):
            agent.new_task(1, 1)
            agent.observe(0, 0, 1.0, 0)
            agent.end_task()
        v_max = agent.library.entries[0].v_max
        assert v_max == pytest.approx(10.0, abs=1e-3)
        np.testing.assert_allclose(agent.library.dmax.values, 2 * 0.01 * (1 + 0.9 * v_max))
        assert agent.library.dmax.tasks_seen == 2

    def test_double_end(self):
        agent = Agent(AgentConfig()).new_task(1, 1)
        agent.end_task()
        with pytest.raises(RuntimeError):
            agent.end_task()


class TestMaxQInit:
    def cfg(self, p_min=0.2, delta=0.1):
        return AgentConfig(variant="maxqinit", distance=DistanceConfig(p_min=p_min), maxqinit_delta=delta)

    def entry(self, value):
        return LearnedTask(single_state(0.0), KnownSet.empty(1, 1), np.full((1, 1), value))

    def test_threshold(self):
        assert maxqinit_threshold(0.2, 0.1) == 11
        assert maxqinit_threshold(0.5, 0.05) == 5

    def test_inactive(self):
        assert maxqinit_bound(TaskLibrary([self.entry(4.0)]), self.cfg()) is None

    def test_elementwise_max(self):
        lib = TaskLibrary([self.entry(4.0), self.entry(6.0)])
        np.testing.assert_array_equal(maxqinit_bound(lib, self.cfg(p_min=1.0)), 6.0)

    def test_needs_p_min(self):
        with pytest.raises(ValueError):
            AgentConfig(variant="maxqinit")


class TestInvariants:
    def test_bound_never_increases(self):
        rng = np.random.default_rng(1)
        agent = Agent(lrmax(epsilon=0.01), TaskLibrary())

        def check(agent, prev, fired):
            if fired:
                assert np.all(agent.q <= prev + 2 * agent.config.eps_q)

        for _ in range(3):
            run_episodes(agent, random_mdp(rng, 5, 2, deterministic=True), rng, 30, 10, check)
            agent.end_task()

    def test_upper_bound_on_deterministic_tasks(self):
        rng = np.random.default_rng(2)
        agent = Agent(AgentConfig(variant="lrmax", n_known=1, distance=DistanceConfig(epsilon=0.01)))
        for _ in range(4):
            m = random_mdp(rng, 5, 2, deterministic=True)
            q_star = dp.value_iteration(m, 1e-6)

            def check(agent, prev, fired):
                assert np.all(agent.q >= q_star - 3 * agent.config.eps_q)

            run_episodes(agent, m, rng, 20, 10, check)
            agent.end_task()

    def test_lrmax_without_library_matches_rmax(self):
        m = random_mdp(np.random.default_rng(3), 6, 3)
        a = run_episodes(Agent(AgentConfig()), m, np.random.default_rng(9), 50, 10)
        b = run_episodes(Agent(lrmax(d_prior=float("inf"))), m, np.random.default_rng(9), 50, 10)
        assert a == b
