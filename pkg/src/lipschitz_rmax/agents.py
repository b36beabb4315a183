"""RMax-style agents: RMax, LRMax, MaxQInit and LRMaxQInit.

All variants share one skeleton. They differ only in the optimistic
bound ``U`` handed to the Bellman solve on each model update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dp
from .mdp import EmpiricalAccumulator, KnownSet, LearnedTask, TabularMdp, freeze_learned_task, optimistic_self_loops
from .metrics import DistanceConfig, DmaxEstimate, dmax_update, source_transition_blocks, transfer_bound

VARIANTS = ("rmax", "lrmax", "maxqinit", "lrmaxqinit")
LIPSCHITZ_VARIANTS = ("lrmax", "lrmaxqinit")
MAXQINIT_VARIANTS = ("maxqinit", "lrmaxqinit")


@dataclass(frozen=True)
class AgentConfig:
    variant: str = "rmax"
    gamma: float = 0.9
    n_known: int = 10
    eps_q: float = dp.DEFAULT_EPS_Q
    distance: DistanceConfig = field(default_factory=DistanceConfig)
    # confidence used by the MaxQInit activation threshold
    maxqinit_delta: float = 0.1
    name: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.n_known < 1:
            raise ValueError("n_known must be a positive integer")
        if self.eps_q <= 0:
            raise ValueError("eps_q must be positive")
        if self.variant in LIPSCHITZ_VARIANTS and self.gamma * (1.0 + self.epsilon) >= 1.0:
            raise ValueError(
                f"gamma*(1+epsilon) = {self.gamma * (1 + self.epsilon):.4g} must be < 1 for Lipschitz bounds"
            )
        if self.variant in MAXQINIT_VARIANTS and self.distance.p_min is None:
            raise ValueError(f"variant {self.variant!r} needs distance.p_min")
        if not 0.0 < self.maxqinit_delta <= 1.0:
            raise ValueError("maxqinit_delta must lie in (0, 1]")

    @property
    def epsilon(self) -> float:
        return self.distance.epsilon

    @property
    def delta(self) -> float:
        return self.distance.delta

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        base = {"rmax": "RMax", "lrmax": "LRMax", "maxqinit": "MaxQInit", "lrmaxqinit": "LRMaxQInit"}[self.variant]
        if self.variant in LIPSCHITZ_VARIANTS and self.distance.d_prior is not None:
            return f"{base}({self.distance.d_prior:g})"
        return base


@dataclass
class TaskLibrary:
    """Tasks saved at the end of each run, in order. Entries are never modified."""

    entries: list = field(default_factory=list)
    dmax: DmaxEstimate | None = None

    def __len__(self):
        return len(self.entries)

    def append(self, task: LearnedTask):
        self.entries.append(task)


def maxqinit_threshold(p_min: float, delta: float) -> int:
    """Smallest number of solved tasks ``m`` with ``(1 - p_min)^m <= delta``."""
    if p_min >= 1.0:
        return 1
    return max(1, math.ceil(math.log(delta) / math.log(1.0 - p_min)))


def maxqinit_bound(library: TaskLibrary, cfg: AgentConfig):
    """Elementwise max of saved Q bounds once enough tasks are solved, else None."""
    if cfg.distance.p_min is None:
        raise ValueError("MaxQInit needs p_min")
    if len(library) < maxqinit_threshold(cfg.distance.p_min, cfg.maxqinit_delta):
        return None
    return np.max(np.stack([t.q_bound for t in library.entries]), axis=0)


@dataclass
class TaskStats:
    """Per-task bookkeeping used by the experiment diagnostics."""

    steps: int = 0
    n_updates: int = 0
    last_update_step: int = 0
    lip_tighter: int = 0
    lip_total: int = 0
    prior_use: list = field(default_factory=list)
    maxqinit_active: bool = False


class Agent:
    """A lifelong RMax-family agent.

    Call :meth:`new_task` before each task, then alternate :meth:`act` and
    :meth:`observe`, and finish with :meth:`end_task`.
    """

    def __init__(self, config: AgentConfig, library: TaskLibrary | None = None):
        self.config = config
        self.library = library if library is not None else TaskLibrary()
        if config.distance.use_online_dmax and self.library.dmax is None:
            self._wants_dmax = True
        else:
            self._wants_dmax = False
        self.q = None
        self.stats = None
        self._active = False

    @property
    def ceiling(self) -> float:
        return 1.0 / (1.0 - self.config.gamma)

    def new_task(self, n_states: int, n_actions: int, initial_state: int = 0):
        for entry in self.library.entries:
            if entry.shape != (n_states, n_actions):
                raise ValueError(f"library entry shape {entry.shape} != task shape {(n_states, n_actions)}")
        S, A = n_states, n_actions
        self.shape = (S, A)
        self.initial_state = initial_state
        self.known = KnownSet.empty(S, A, self.config.n_known)
        self.acc = EmpiricalAccumulator.empty(S, A)
        self.r_hat = np.ones((S, A))
        self.t_hat = optimistic_self_loops(S, A)
        self.q = np.full((S, A), self.ceiling)
        self.stats = TaskStats()
        self._active = True
        if self._wants_dmax and self.library.dmax is None:
            self.library.dmax = DmaxEstimate.empty(S, A)
        self._source_blocks = None
        self._distances = None
        if self.config.variant in LIPSCHITZ_VARIANTS and len(self.library):
            self._source_blocks = source_transition_blocks(self.library.entries)
        self.update_q()
        return self

    def act(self, s: int) -> int:
        return int(np.argmax(self.q[s]))

    def observe(self, s: int, a: int, r: float, s_next: int) -> bool:
        """Record a transition; return True when it triggered a model update."""
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"reward {r} out of [0, 1]")
        self.stats.steps += 1
        if self.known.is_known(s, a):
            self.known.counts[s, a] += 1
            return False
        self.acc.add(s, a, r, s_next)
        n = self.known.visit(s, a)
        if n < self.config.n_known:
            return False
        n_samples = self.acc.n_samples[s, a]
        self.r_hat[s, a] = self.acc.reward_sums[s, a] / n_samples
        self.t_hat[s, a] = self.acc.transition_counts[s, a] / n_samples
        self.update_q()
        self.stats.n_updates += 1
        self.stats.last_update_step = self.stats.steps
        return True

    def snapshot(self) -> LearnedTask:
        model = TabularMdp(self.r_hat, self.t_hat, self.config.gamma, self.initial_state)
        return LearnedTask(model, self.known, self.q)

    def optimistic_bound(self) -> np.ndarray:
        """The bound ``U`` used on unknown pairs, per the agent's variant."""
        cfg = self.config
        U = np.full(self.shape, self.ceiling)
        if cfg.variant in LIPSCHITZ_VARIANTS and len(self.library):
            U_lip, info = transfer_bound(
                self.snapshot(),
                self.library.entries,
                cfg.distance,
                self.library.dmax,
                cfg.eps_q,
                self._source_blocks,
                self._distances,
            )
            self._distances = info.distances
            self.stats.lip_tighter += info.n_tighter
            self.stats.lip_total += info.n_pairs
            if info.prior_use is not None:
                self.stats.prior_use.append(info.prior_use)
            np.minimum(U, U_lip, out=U)
        if cfg.variant in MAXQINIT_VARIANTS:
            mq = maxqinit_bound(self.library, cfg)
            if mq is not None:
                self.stats.maxqinit_active = True
                np.minimum(U, mq, out=U)
        return U

    def update_q(self):
        U = self.optimistic_bound()
        self.q = dp.solve_optimistic_q(
            self.r_hat, self.t_hat, self.known.mask, U, self.config.gamma, self.config.eps_q
        )
        return self.q

    def end_task(self) -> LearnedTask:
        if not self._active:
            raise RuntimeError("end_task called without an active task")
        learned = freeze_learned_task(self.acc, self.known, self.q, self.config.gamma, self.initial_state)
        if self.library.dmax is not None:
            est = self.library.dmax
            for prev in self.library.entries:
                est = dmax_update(est, learned, prev, self.config.distance)
            self.library.dmax = est.seen_task()
        self.library.append(learned)
        self._active = False
        return learned
