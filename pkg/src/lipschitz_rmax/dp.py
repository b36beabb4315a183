"""Contraction fixed-point solvers on state-action tables.

All sweeps are synchronous (Jacobi): every entry of iterate ``n + 1`` is
computed from iterate ``n`` only.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .mdp import TabularMdp, check_pair_function

DEFAULT_EPS_Q = 1e-3


class ContractionError(ValueError):
    """Raised when an operator's modulus is not below one."""


def vi_iteration_budget(gamma: float, eps_q: float) -> int:
    """Worst-case sweeps for value iteration from zero to reach ``eps_q``.

    Assumes rewards in [0, 1]: ``ceil(ln(1 / (eps_q (1 - gamma))) / (1 - gamma))``.
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractionError(f"discount must lie in [0, 1), got {gamma}")
    if eps_q <= 0:
        raise ValueError("eps_q must be positive")
    if gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(1.0 / (eps_q * (1.0 - gamma))) / (1.0 - gamma)))


def _stop_threshold(modulus: float, eps_q: float) -> float:
    # ||x_n - x*|| <= modulus / (1 - modulus) * ||x_n - x_{n-1}||
    if modulus == 0.0:
        return math.inf
    return eps_q * (1.0 - modulus) / (2.0 * modulus)


def value_iteration(mdp: TabularMdp, eps_q: float = DEFAULT_EPS_Q, return_info: bool = False):
    """Optimal Q-function of ``mdp`` to ``eps_q`` in max norm.

    Runs at most ``vi_iteration_budget`` sweeps from zero and stops early
    once successive iterates differ by less than ``eps_q (1 - gamma) / (2 gamma)``.
    """
    gamma = mdp.discount
    budget = vi_iteration_budget(gamma, eps_q)
    R = mdp.reward
    S, A = R.shape
    P = sparse.csr_matrix(mdp.transition.reshape(S * A, S))
    tol = _stop_threshold(gamma, eps_q)
    q = np.zeros((S, A))
    prev_diff = None
    n = 0
    for n in range(1, budget + 1):
        q_new = R + gamma * (P @ q.max(axis=1)).reshape(S, A)
        diff = float(np.max(np.abs(q_new - q)))
        _check_contraction(diff, prev_diff, gamma)
        q, prev_diff = q_new, diff
        if diff < tol:
            break
    if return_info:
        return q, {"iterations": n, "budget": budget, "last_diff": prev_diff}
    return q


def solve_optimistic_q(
    reward,
    transition,
    known,
    u,
    gamma: float,
    eps_q: float = DEFAULT_EPS_Q,
    return_info: bool = False,
):
    """Solve the optimistic bound: Bellman backup on known pairs, ``u`` elsewhere.

    ``reward``/``transition`` are the learned model; only their known rows
    matter. Iterates start at ``1/(1-gamma)`` on known pairs and decrease,
    so the returned table never falls below the exact fixed point.
    """
    if not 0.0 <= gamma < 1.0:
        raise ContractionError(f"discount must lie in [0, 1), got {gamma}")
    known = np.asarray(known, dtype=bool)
    S, A = known.shape
    u = check_pair_function(u, (S, A), "u")
    ceiling = 1.0 / (1.0 - gamma)
    if np.any(u > ceiling + 1e-9):
        raise ValueError(f"u exceeds 1/(1-gamma) = {ceiling}; the optimistic bound contract breaks")
    if not known.any():
        out = u.copy()
        return (out, {"iterations": 0}) if return_info else out

    reward = np.asarray(reward, dtype=float)
    T = np.asarray(transition, dtype=float)
    rows = np.flatnonzero(known.ravel())
    P = sparse.csr_matrix(T.reshape(S * A, S)[rows])
    r_known = reward.ravel()[rows]
    q = u.copy().ravel()
    q[rows] = ceiling
    budget = vi_iteration_budget(gamma, eps_q)
    tol = _stop_threshold(gamma, eps_q)
    prev_diff = None
    n = 0
    for n in range(1, budget + 1):
        v = q.reshape(S, A).max(axis=1)
        new_rows = r_known + gamma * (P @ v)
        diff = float(np.max(np.abs(new_rows - q[rows])))
        _check_contraction(diff, prev_diff, gamma)
        q[rows] = new_rows
        prev_diff = diff
        if diff < tol:
            break
    q = q.reshape(S, A)
    return (q, {"iterations": n, "last_diff": prev_diff}) if return_info else q


def solve_pair_fixed_point(
    local,
    transition,
    gamma: float,
    known=None,
    slack: float = 0.0,
    eps_q: float = DEFAULT_EPS_Q,
    return_info: bool = False,
):
    """Fixed point of ``d = local + gamma * backup(d)`` over state-action tables.

    On known pairs ``backup(d) = T @ max_a d + slack * max d``; on unknown
    pairs it is ``max d``. The modulus is ``gamma * (1 + slack)`` when some
    pair is unknown or ``slack > 0`` and must be below one.

    Leading batch dimensions are supported: ``local`` of shape ``(B, S, A)``
    with ``transition`` of shape ``(S, A, S)`` (shared) or ``(B, S, A, S)``
    and ``known`` of shape ``(S, A)`` or ``(B, S, A)``. Iterates start at
    zero and are nondecreasing when ``local >= 0``.
    """
    local = np.asarray(local, dtype=float)
    batched = local.ndim == 3
    if not batched:
        local = local[None]
    B, S, A = local.shape
    if not np.all(np.isfinite(local)):
        raise ValueError("local term has non-finite entries")
    modulus = gamma * (1.0 + slack)
    if not 0.0 <= gamma or modulus >= 1.0:
        raise ContractionError(
            f"modulus gamma*(1+eps) = {modulus:.6g} must be < 1 for the fixed point to exist"
        )
    if known is None:
        known = np.ones((B, S, A), dtype=bool)
    else:
        known = np.broadcast_to(np.asarray(known, dtype=bool), (B, S, A))
    P = _block_transition(transition, known, B, S, A)
    # per-row coefficient on the global max of its block
    coef = np.where(known, slack, 1.0).reshape(B, S * A)
    uses_max = bool(np.any(coef > 0))

    top = float(local.max(initial=0.0))
    if top <= 0.0 or modulus == 0.0:
        budget = 1
    else:
        budget = max(1, math.ceil(math.log(top / (eps_q * (1.0 - modulus))) / -math.log(modulus)))
    tol = _stop_threshold(modulus, eps_q)
    flat_local = local.reshape(B, S * A)
    d = np.zeros((B, S * A))
    prev_diff = None
    n = 0
    for n in range(1, budget + 1):
        v = d.reshape(B, S, A).max(axis=2).ravel()
        backed = (P @ v).reshape(B, S * A)
        if uses_max:
            backed = backed + coef * d.max(axis=1, keepdims=True)
        d_new = flat_local + gamma * backed
        diff = float(np.max(np.abs(d_new - d)))
        _check_contraction(diff, prev_diff, modulus)
        d, prev_diff = d_new, diff
        if diff < tol:
            break
    out = d.reshape(B, S, A)
    if not batched:
        out = out[0]
    return (out, {"iterations": n, "budget": budget, "modulus": modulus}) if return_info else out


def _block_transition(transition, known, B, S, A):
    if sparse.issparse(transition):
        return transition
    T = np.asarray(transition, dtype=float)
    if T.ndim == 3:
        T = np.broadcast_to(T, (B, S, A, S))
    if T.shape != (B, S, A, S):
        raise ValueError(f"transition shape {T.shape} does not match local {(B, S, A)}")
    blocks = [
        sparse.csr_matrix(np.where(known[b][:, :, None], T[b], 0.0).reshape(S * A, S))
        for b in range(B)
    ]
    return sparse.block_diag(blocks, format="csr")


def _check_contraction(diff, prev_diff, modulus):
    if __debug__ and prev_diff is not None:
        assert diff <= modulus * prev_diff + 1e-9 * (1.0 + prev_diff), (
            f"contraction violated: {diff} > {modulus} * {prev_diff}"
        )
