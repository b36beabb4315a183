"""Small task builders shared by the test modules."""

import numpy as np

from lipschitz_rmax import dp
from lipschitz_rmax.mdp import KnownSet, LearnedTask, TabularMdp


def random_mdp(rng, n_states=4, n_actions=2, gamma=0.9, deterministic=False):
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    if deterministic:
        T = np.zeros((n_states, n_actions, n_states))
        nxt = rng.integers(n_states, size=(n_states, n_actions))
        T[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], nxt] = 1.0
    else:
        T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return TabularMdp(R, T, gamma)


def chain_mdp(gamma=0.9, goal_reward=0.0):
    """Two states: action 1 moves 0 -> 1, action 0 stays; state 1 loops."""
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 1.0
    T[0, 1, 1] = 1.0
    T[1, :, 1] = 1.0
    R = np.array([[0.0, 0.0], [goal_reward, goal_reward]])
    return TabularMdp(R, T, gamma)


def single_state(reward, gamma=0.9):
    return TabularMdp(np.array([[reward]]), np.ones((1, 1, 1)), gamma)


def learned_from(mdp, mask=None, n_known=10, eps_q=1e-6):
    """A learned task whose known pairs carry the true model.

    Unknown pairs get the optimistic self-loop and ``q_bound`` is the
    optimistic solution of that model.
    """
    S, A = mdp.shape
    mask = np.ones((S, A), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    loops = np.zeros((S, A, S))
    loops[np.arange(S), :, np.arange(S)] = 1.0
    R = np.where(mask, mdp.reward, 1.0)
    T = np.where(mask[:, :, None], mdp.transition, loops)
    ceiling = 1.0 / (1.0 - mdp.discount)
    q = dp.solve_optimistic_q(R, T, mask, np.full((S, A), ceiling), mdp.discount, eps_q)
    return LearnedTask(TabularMdp(R, T, mdp.discount, mdp.initial_state), KnownSet.from_mask(mask, n_known), q)
