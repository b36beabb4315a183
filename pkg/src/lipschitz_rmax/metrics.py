"""Distances between tasks and the Lipschitz upper bounds built from them.

Direction convention: ``dhat_model(src, dst)`` bounds the model distance
of ``src`` from ``dst`` weighted by ``gamma * V_dst``, and the dissimilarity
``d(src || dst)`` propagates it through the dynamics of ``src``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from . import dp
from ._kernels import SparseTask, csr_arrays, model_table, solve_blocks
from .mdp import LearnedTask, TabularMdp, check_pair_function

KK, KU, UK, UU = 0, 1, 2, 3
CASE_NAMES = {KK: "K&K", KU: "K&~K", UK: "~K&K", UU: "~K&~K"}
TRANSITION_MAX_METHODS = ("exact", "greedy", "loose")


@dataclass(frozen=True)
class DistanceConfig:
    """Accuracy, confidence and optional refinements of the distance bounds.

    ``d_prior`` is a prior upper bound on the model distance between any
    two tasks of the family. ``transition_max`` picks how the free
    transition row is maximised when one side is unknown.
    """

    epsilon: float = 0.01
    delta: float = 0.05
    d_prior: float | None = None
    use_online_dmax: bool = False
    p_min: float | None = None
    transition_max: str = "exact"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.d_prior is not None and not self.d_prior >= 0:
            raise ValueError("d_prior must be nonnegative")
        if self.p_min is not None and not 0 < self.p_min <= 1:
            raise ValueError("p_min must lie in (0, 1]")
        if self.transition_max not in TRANSITION_MAX_METHODS:
            raise ValueError(f"transition_max must be one of {TRANSITION_MAX_METHODS}")


@dataclass(frozen=True)
class DmaxEstimate:
    """Running maximum of model-distance bounds over explored task pairs."""

    values: np.ndarray
    tasks_seen: int = 0
    n_updates: int = 0

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> "DmaxEstimate":
        return cls(np.zeros((n_states, n_actions)))

    def seen_task(self) -> "DmaxEstimate":
        return replace(self, tasks_seen=self.tasks_seen + 1)


def model_pseudometric(M: TabularMdp, M_bar: TabularMdp, f, s: int, a: int) -> float:
    """``|R - R_bar| + sum_s' f(s') |T - T_bar|`` at ``(s, a)``."""
    if M.shape != M_bar.shape:
        raise ValueError(f"dimension mismatch: {M.shape} vs {M_bar.shape}")
    f = np.asarray(f, dtype=float)
    if f.shape != (M.n_states,) or np.any(f < 0):
        raise ValueError("f must be a nonnegative vector over states")
    return float(
        abs(M.reward[s, a] - M_bar.reward[s, a])
        + f @ np.abs(M.transition[s, a] - M_bar.transition[s, a])
    )


def model_pseudometric_table(R, T, R_bar, T_bar, f) -> np.ndarray:
    return np.abs(R - R_bar) + np.abs(T - T_bar) @ f


def exact_dissimilarity(M: TabularMdp, M_bar: TabularMdp, eps_q: float = dp.DEFAULT_EPS_Q):
    """Exact local dissimilarity ``d(M || M_bar)`` from ground-truth models."""
    if M.shape != M_bar.shape:
        raise ValueError(f"dimension mismatch: {M.shape} vs {M_bar.shape}")
    gamma = M.discount
    v_bar = dp.value_iteration(M_bar, eps_q).max(axis=1)
    local = model_pseudometric_table(M.reward, M.transition, M_bar.reward, M_bar.transition, gamma * v_bar)
    return dp.solve_pair_fixed_point(local, M.transition, gamma, eps_q=eps_q)


def global_dissimilarity(M: TabularMdp, M_bar: TabularMdp, eps_q: float = dp.DEFAULT_EPS_Q) -> float:
    """``max_{s,a} model distance / (1 - gamma)``, with ``f = gamma V*_{M_bar}``."""
    if M.shape != M_bar.shape:
        raise ValueError(f"dimension mismatch: {M.shape} vs {M_bar.shape}")
    gamma = M.discount
    v_bar = dp.value_iteration(M_bar, eps_q).max(axis=1)
    local = model_pseudometric_table(M.reward, M.transition, M_bar.reward, M_bar.transition, gamma * v_bar)
    return float(local.max() / (1.0 - gamma))


def max_transition_gap(P, V, method: str = "exact") -> np.ndarray:
    """``max_t sum_s' V(s') |P(s') - t(s')|`` over distributions ``t``, per row of ``P``.

    ``exact``: the objective is convex so the maximum sits at a vertex
    ``t = e_k``, worth ``P @ V + V_k (1 - 2 P_k)``. ``greedy``: walk states
    by decreasing ``V`` and put all mass on the first one with ``P <= 1/2``.
    ``loose``: ``P @ V + max V``, an upper bound on the exact value.
    """
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    base = P @ V
    if method == "exact":
        return base + np.max(V * (1.0 - 2.0 * P), axis=-1)
    if method == "loose":
        return base + V.max()
    if method == "greedy":
        order = np.argsort(-V, kind="stable")
        Po = P[..., order]
        hit = Po <= 0.5
        first = np.argmax(hit, axis=-1)
        found = np.take_along_axis(hit, first[..., None], axis=-1)[..., 0]
        k = order[first]
        pk = np.take_along_axis(P, k[..., None], axis=-1)[..., 0]
        return np.where(found, base + V[k] * (1.0 - 2.0 * pk), base)
    raise ValueError(f"unknown transition maximisation {method!r}")


def _check_pair(src: LearnedTask, dst: LearnedTask):
    if src.shape != dst.shape:
        raise ValueError(f"dimension mismatch: {src.shape} vs {dst.shape}")
    if dst.v_max < 0:
        raise ValueError("negative v_max")


def dhat_model_table(src: LearnedTask, dst: LearnedTask, cfg: DistanceConfig):
    """Upper bound on the model distance at every pair, with its case tags.

    Each knowledge case has its own bound; the bound of a less-informed case
    stays valid when more is known, so a pair takes the minimum over every
    case that applies to it. This keeps the result monotone in both known
    sets and never above ``1 + 2 gamma v_max``.
    """
    _check_pair(src, dst)
    gamma = dst.discount
    V = dst.state_values
    v_max = dst.v_max
    B = cfg.epsilon * (1.0 + gamma * v_max)
    k_src, k_dst = src.known_mask, dst.known_mask

    uu = 1.0 + 2.0 * gamma * v_max
    values = np.full(src.shape, uu)
    cases = np.full(src.shape, UU, dtype=np.int8)

    if k_src.any():
        R, T = src.reward[k_src], src.transition[k_src]
        ku = np.maximum(R, 1.0 - R) + gamma * max_transition_gap(T, V, cfg.transition_max) + B
        values[k_src] = np.minimum(values[k_src], ku)
        cases[k_src] = KU
    if k_dst.any():
        R, T = dst.reward[k_dst], dst.transition[k_dst]
        uk = np.maximum(R, 1.0 - R) + gamma * max_transition_gap(T, V, cfg.transition_max) + B
        values[k_dst] = np.minimum(values[k_dst], uk)
        cases[k_dst & ~k_src] = UK
    both = k_src & k_dst
    if both.any():
        kk = model_pseudometric_table(
            src.reward[both], src.transition[both], dst.reward[both], dst.transition[both], gamma * V
        ) + 2.0 * B
        values[both] = np.minimum(values[both], kk)
        cases[both] = KK
    return values, cases


def dhat_model(src: LearnedTask, dst: LearnedTask, cfg: DistanceConfig, s: int, a: int) -> float:
    """Computable upper bound on the model distance of ``src`` from ``dst`` at ``(s, a)``."""
    values, _ = dhat_model_table(src, dst, cfg)
    return float(values[s, a])


def dmax_confident(m: int, p_min: float, delta: float) -> bool:
    """True once ``2 (1 - p_min)^m - (1 - 2 p_min)^m <= delta``.

    For ``p_min > 1/2`` the second power alternates in sign; it is
    evaluated as written.
    """
    return 2.0 * (1.0 - p_min) ** m - (1.0 - 2.0 * p_min) ** m <= delta


def _online_dmax_active(cfg: DistanceConfig, dmax: DmaxEstimate | None) -> bool:
    return (
        cfg.use_online_dmax
        and dmax is not None
        and cfg.p_min is not None
        and dmax.n_updates > 0
        and dmax_confident(dmax.tasks_seen, cfg.p_min, cfg.delta)
    )


def local_distance(src, dst, cfg: DistanceConfig, dmax: DmaxEstimate | None = None):
    """Local term of the dissimilarity fixed point after prior/online clipping.

    Returns ``(local, raw, prior_used)`` where ``raw`` is the unclipped
    model bound and ``prior_used`` flags pairs with ``d_prior < raw``.
    """
    raw, _ = dhat_model_table(src, dst, cfg)
    local, prior_used = _clip(raw, cfg, dmax)
    return local, raw, prior_used


def _clip(raw, cfg: DistanceConfig, dmax):
    local = raw
    prior_used = np.zeros(raw.shape, dtype=bool)
    if cfg.d_prior is not None:
        prior_used = cfg.d_prior < raw - 1e-9
        local = np.minimum(local, cfg.d_prior)
    if _online_dmax_active(cfg, dmax):
        local = np.minimum(local, dmax.values + cfg.epsilon)
    return local, prior_used


def dhat_dissimilarity(
    src: LearnedTask,
    dst: LearnedTask,
    cfg: DistanceConfig,
    dmax: DmaxEstimate | None = None,
    eps_q: float = dp.DEFAULT_EPS_Q,
):
    """Computable upper bound on ``d(src || dst)`` at every pair.

    Known pairs of ``src`` back up through its learned transitions plus an
    ``epsilon * max`` slack; unknown pairs back up the global maximum.
    Requires ``gamma (1 + epsilon) < 1``.
    """
    _check_pair(src, dst)
    local, _, _ = local_distance(src, dst, cfg, dmax)
    return dp.solve_pair_fixed_point(
        local, src.transition, src.discount, known=src.known_mask, slack=cfg.epsilon, eps_q=eps_q
    )


def lipschitz_q_bound(src: LearnedTask, d_fwd, d_bwd) -> np.ndarray:
    """``Q_bar + min(d_fwd, d_bwd)``, the bound a source task induces."""
    d_fwd = check_pair_function(d_fwd, src.shape, "d_fwd")
    d_bwd = check_pair_function(d_bwd, src.shape, "d_bwd")
    if np.any(d_fwd < 0) or np.any(d_bwd < 0):
        raise ValueError("distances must be nonnegative")
    return src.q_bound + np.minimum(d_fwd, d_bwd)


def combine_bounds(bounds, gamma: float, shape=None) -> np.ndarray:
    """Pointwise minimum of the bounds and the ``1 / (1 - gamma)`` ceiling."""
    bounds = [np.asarray(b, dtype=float) for b in bounds]
    if shape is None:
        if not bounds:
            raise ValueError("shape is required when no bound is given")
        shape = bounds[0].shape
    out = np.full(shape, 1.0 / (1.0 - gamma))
    for b in bounds:
        np.minimum(out, b, out=out)
    return out


def dmax_update(est: DmaxEstimate, src: LearnedTask, dst: LearnedTask, cfg: DistanceConfig) -> DmaxEstimate:
    """Fold both directions of one task pair into the running maximum."""
    fwd, _ = dhat_model_table(src, dst, cfg)
    bwd, _ = dhat_model_table(dst, src, cfg)
    values = np.maximum(est.values, np.maximum(fwd, bwd))
    return replace(est, values=values, n_updates=est.n_updates + 1)


@dataclass
class TransferStats:
    n_pairs: int = 0
    n_tighter: int = 0
    prior_use: float | None = None
    per_source: list = field(default_factory=list)
    distances: np.ndarray | None = None


def transfer_bound(
    current: LearnedTask,
    sources: list[LearnedTask],
    cfg: DistanceConfig,
    dmax: DmaxEstimate | None = None,
    eps_q: float = dp.DEFAULT_EPS_Q,
    source_blocks=None,
    warm_start=None,
):
    """Combined Lipschitz bound over all source tasks, plus usage statistics.

    Solves the ``2 N`` dissimilarity fixed points (both directions for each
    source) as one batched problem. ``source_blocks`` may carry the masked
    sparse transitions of the sources, which do not change within a task.
    ``warm_start`` is the ``distances`` array of an earlier call with the
    same sources; it only changes where the iterations start.
    """
    gamma = current.discount
    S, A = current.shape
    if not sources:
        return combine_bounds([], gamma, (S, A)), TransferStats(S * A, 0, None)
    n = len(sources)
    cache = source_blocks if source_blocks is not None else source_transition_blocks(sources)
    cur_arrays = csr_arrays(_masked_block(current))
    cur = SparseTask(current.reward, current.known_mask, cur_arrays, 0, current.state_values)
    locals_ = np.empty((2 * n, S, A))
    used = np.empty((2 * n, S, A), dtype=bool)
    for i, src in enumerate(cache.tasks):
        raw, _ = model_table(cur, src, gamma, cfg.epsilon, cfg.transition_max)
        locals_[i], used[i] = _clip(raw, cfg, dmax)
        raw, _ = model_table(src, cur, gamma, cfg.epsilon, cfg.transition_max)
        locals_[n + i], used[n + i] = _clip(raw, cfg, dmax)

    ptr, idx, val = cur_arrays
    arrays = (
        np.concatenate([ptr, cache.arrays[0][1:] + ptr[-1]]),
        np.concatenate([idx, cache.arrays[1]]),
        np.concatenate([val, cache.arrays[2]]),
    )
    row_start = [0] * n + [S * A * (1 + i) for i in range(n)]
    d, _ = solve_blocks(
        locals_, _stack_known(current, sources), arrays, row_start, gamma, cfg.epsilon, eps_q, init=warm_start
    )
    dist = np.minimum(d[:n], d[n:])
    bounds = cache.q_bounds + dist
    U = combine_bounds(bounds, gamma, (S, A))
    ceiling = 1.0 / (1.0 - gamma)
    stats = TransferStats(
        n_pairs=S * A,
        n_tighter=int(np.count_nonzero(U < ceiling - 1e-12)),
        prior_use=float(np.mean(used)) if cfg.d_prior is not None else None,
        distances=d,
    )
    return U, stats


def _masked_block(task: LearnedTask):
    S, A = task.shape
    T = np.where(task.known_mask[:, :, None], task.transition, 0.0)
    return sparse.csr_matrix(T.reshape(S * A, S))


@dataclass(frozen=True)
class SourceCache:
    """Per-task data of a fixed list of sources, prepared once per task."""

    tasks: list
    arrays: tuple
    q_bounds: np.ndarray


def source_transition_blocks(sources) -> SourceCache:
    """Stack the masked transitions of the sources, one row block per source."""
    S, A = sources[0].shape
    arrays = csr_arrays(sparse.vstack([_masked_block(s) for s in sources], format="csr"))
    tasks = [
        SparseTask(s.reward, s.known_mask, arrays, i * S * A, s.state_values) for i, s in enumerate(sources)
    ]
    return SourceCache(tasks, arrays, np.stack([s.q_bound for s in sources]))


def _stack_known(current, sources):
    return np.stack([current.known_mask] * len(sources) + [s.known_mask for s in sources])
