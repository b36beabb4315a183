"""Compiled inner loops for the batched dissimilarity solve."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _solve_blocks(local, known, ptr, idx, val, row_start, gamma, slack, eps_q, init, out, iters):
    # Block b reads its transition rows from the stacked CSR starting at
    # row_start[b]; columns are states. Each block is its own contraction
    # and stops on its own criterion.
    B, S, A = local.shape
    modulus = gamma * (1.0 + slack)
    tol = eps_q * (1.0 - modulus) / (2.0 * modulus) if modulus > 0.0 else math.inf
    d = np.zeros(S * A)
    d_new = np.zeros(S * A)
    v = np.zeros(S)
    for b in range(B):
        top = 0.0
        for s in range(S):
            for a in range(A):
                if local[b, s, a] > top:
                    top = local[b, s, a]
                if init[b, s, a] * (1.0 - modulus) > top:
                    top = init[b, s, a] * (1.0 - modulus)
        if top <= 0.0 or modulus == 0.0:
            budget = 1
        else:
            budget = max(1, int(math.ceil(math.log(top / (eps_q * (1.0 - modulus))) / -math.log(modulus))))
        for s in range(S):
            for a in range(A):
                d[s * A + a] = init[b, s, a]
        n = 0
        for n in range(1, budget + 1):
            dmax = 0.0
            for s in range(S):
                m = d[s * A]
                for a in range(1, A):
                    if d[s * A + a] > m:
                        m = d[s * A + a]
                v[s] = m
                if m > dmax:
                    dmax = m
            diff = 0.0
            base = row_start[b]
            for s in range(S):
                for a in range(A):
                    i = s * A + a
                    if known[b, s, a]:
                        acc = 0.0
                        for k in range(ptr[base + i], ptr[base + i + 1]):
                            acc += val[k] * v[idx[k]]
                        acc += slack * dmax
                    else:
                        acc = dmax
                    x = local[b, s, a] + gamma * acc
                    g = abs(x - d[i])
                    if g > diff:
                        diff = g
                    d_new[i] = x
            d[:] = d_new
            if diff < tol:
                break
        iters[b] = n
        for s in range(S):
            for a in range(A):
                out[b, s, a] = d[s * A + a]


def solve_blocks(local, known, arrays, row_start, gamma, slack, eps_q, init=None):
    """Batched fixed points over blocks that share one stacked CSR matrix.

    Same contract as :func:`lipschitz_rmax.dp.solve_pair_fixed_point` with
    ``local`` and ``known`` of shape ``(B, S, A)``; block ``b`` uses rows
    ``row_start[b] : row_start[b] + S*A`` of the CSR ``arrays`` (see
    :func:`csr_arrays`). ``init`` is an optional starting point (default
    zero); the stopping rule bounds the error whatever the start.
    """
    local = np.ascontiguousarray(local, dtype=np.float64)
    known = np.ascontiguousarray(known, dtype=np.bool_)
    out = np.empty_like(local)
    init = np.zeros_like(local) if init is None else np.ascontiguousarray(init, dtype=np.float64)
    iters = np.zeros(local.shape[0], dtype=np.int64)
    _solve_blocks(
        local,
        known,
        *arrays,
        np.asarray(row_start, dtype=np.int64),
        float(gamma),
        float(slack),
        float(eps_q),
        init,
        out,
        iters,
    )
    return out, iters


METHOD_CODES = {"exact": 0, "greedy": 1, "loose": 2}


@njit(cache=True)
def _row_dot(ptr, idx, val, row, V):
    acc = 0.0
    for k in range(ptr[row], ptr[row + 1]):
        acc += val[k] * V[idx[k]]
    return acc


@njit(cache=True)
def _row_prob(ptr, idx, val, row, state):
    for k in range(ptr[row], ptr[row + 1]):
        if idx[k] == state:
            return val[k]
    return 0.0


@njit(cache=True)
def _gap(ptr, idx, val, row, V, order, method):
    base = _row_dot(ptr, idx, val, row, V)
    if method == 2:
        return base + V[order[0]]
    if method == 1:
        for j in range(order.shape[0]):
            k = order[j]
            p = _row_prob(ptr, idx, val, row, k)
            if p <= 0.5:
                return base + V[k] * (1.0 - 2.0 * p)
        return base
    best = -math.inf
    for k in range(ptr[row], ptr[row + 1]):
        x = V[idx[k]] * (1.0 - 2.0 * val[k])
        if x > best:
            best = x
    # largest value among states outside the row's support
    for j in range(order.shape[0]):
        k = order[j]
        if _row_prob(ptr, idx, val, row, k) == 0.0:
            if V[k] > best:
                best = V[k]
            break
    return base + best


@njit(cache=True)
def _weighted_l1(ptr_a, idx_a, val_a, ra, ptr_b, idx_b, val_b, rb, f):
    # sum_s' f(s') |a(s') - b(s')| over the union of two sorted supports
    i, j = ptr_a[ra], ptr_b[rb]
    ie, je = ptr_a[ra + 1], ptr_b[rb + 1]
    acc = 0.0
    while i < ie or j < je:
        if j >= je or (i < ie and idx_a[i] < idx_b[j]):
            acc += f[idx_a[i]] * abs(val_a[i])
            i += 1
        elif i >= ie or idx_b[j] < idx_a[i]:
            acc += f[idx_b[j]] * abs(val_b[j])
            j += 1
        else:
            acc += f[idx_a[i]] * abs(val_a[i] - val_b[j])
            i += 1
            j += 1
    return acc


@njit(cache=True)
def _model_table(R_s, K_s, ptr_s, idx_s, val_s, off_s, R_d, K_d, ptr_d, idx_d, val_d, off_d,
                 V, order, gamma, B, uu, method, values, cases):
    S, A = R_s.shape
    f = gamma * V
    for s in range(S):
        for a in range(A):
            row = s * A + a
            best = uu
            case = 3
            if K_s[s, a]:
                r = R_s[s, a]
                x = max(r, 1.0 - r) + gamma * _gap(ptr_s, idx_s, val_s, off_s + row, V, order, method) + B
                if x < best:
                    best = x
                case = 1
            if K_d[s, a]:
                r = R_d[s, a]
                x = max(r, 1.0 - r) + gamma * _gap(ptr_d, idx_d, val_d, off_d + row, V, order, method) + B
                if x < best:
                    best = x
                if case == 3:
                    case = 2
            if K_s[s, a] and K_d[s, a]:
                x = abs(R_s[s, a] - R_d[s, a]) + _weighted_l1(
                    ptr_s, idx_s, val_s, off_s + row, ptr_d, idx_d, val_d, off_d + row, f
                ) + 2.0 * B
                if x < best:
                    best = x
                case = 0
            values[s, a] = best
            cases[s, a] = case


class SparseTask:
    """A learned task with its masked transitions as CSR arrays.

    Several tasks may share one stacked CSR; ``offset`` is the first row of
    this task in it.
    """

    __slots__ = ("reward", "known", "ptr", "idx", "val", "offset", "values")

    def __init__(self, reward, known, csr_arrays, offset, values):
        self.reward = np.ascontiguousarray(reward, dtype=np.float64)
        self.known = np.ascontiguousarray(known, dtype=np.bool_)
        self.ptr, self.idx, self.val = csr_arrays
        self.offset = int(offset)
        self.values = np.ascontiguousarray(values, dtype=np.float64)


def csr_arrays(m):
    """``(indptr, indices, data)`` of a CSR matrix with sorted indices, as int64/float64."""
    m = m.tocsr()
    if not m.has_sorted_indices:
        m = m.sorted_indices()
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64)


def model_table(src: SparseTask, dst: SparseTask, gamma, epsilon, method="exact"):
    """Sparse twin of :func:`lipschitz_rmax.metrics.dhat_model_table`."""
    V = dst.values
    v_max = float(V.max(initial=0.0))
    B = epsilon * (1.0 + gamma * v_max)
    uu = 1.0 + 2.0 * gamma * v_max
    order = np.argsort(-V, kind="stable").astype(np.int64)
    values = np.empty(src.reward.shape)
    cases = np.empty(src.reward.shape, dtype=np.int8)
    _model_table(src.reward, src.known, src.ptr, src.idx, src.val, src.offset,
                 dst.reward, dst.known, dst.ptr, dst.idx, dst.val, dst.offset,
                 V, order, float(gamma), B, uu, METHOD_CODES[method], values, cases)
    return values, cases
