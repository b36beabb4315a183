"""Lifelong experiment driver, summary statistics and CSV export.

Seeding uses common random numbers: the task sequence depends only on
``(seed, repeat)`` and the environment noise of a task only on
``(seed, repeat, task)``, so every agent faces the same draws.
"""

from __future__ import annotations

import csv
import logging
import math
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dp
from .agents import LIPSCHITZ_VARIANTS, Agent, AgentConfig, TaskLibrary
from .envs import TaskDistribution, sample_task
from .mdp import TabularMdp, save_learned_task

log = logging.getLogger(__name__)

RETURNS_HEADER = ("repeat", "agent", "task_idx", "task_id", "episode", "return", "relative_return")
DIAGNOSTICS_HEADER = ("agent", "d_prior", "rho_lip", "rho_speedup", "rho_return")
TASKS_HEADER = (
    "repeat", "agent", "task_idx", "task_id", "optimal_return", "n_updates",
    "last_update_step", "lip_tighter", "lip_total", "prior_use", "maxqinit_active",
)
EVENTS_HEADER = ("repeat", "agent", "task_idx", "update", "step")
PRIOR_USE_HEADER = ("agent", "task_idx", "update", "mean", "ci", "n")

_TASK_STREAM = 1
_ENV_STREAM = 2


@dataclass(frozen=True)
class LifelongConfig:
    distribution: TaskDistribution = field(default_factory=TaskDistribution)
    n_tasks: int = 15
    n_episodes: int = 2000
    episode_len: int = 10
    n_repeats: int = 10
    agents: tuple = (AgentConfig(),)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        for name in ("n_tasks", "n_episodes", "episode_len", "n_repeats"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.agents:
            raise ValueError("agents must be nonempty")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise ValueError(f"agent labels must be unique, got {labels}")
        for a in self.agents:
            if not math.isclose(a.gamma, self.distribution.gamma):
                raise ValueError(f"agent {a.label} gamma {a.gamma} != distribution gamma {self.distribution.gamma}")

    @property
    def labels(self) -> list:
        return [a.label for a in self.agents]


@dataclass
class TaskLog:
    """What one agent did on one task."""

    returns: np.ndarray
    n_updates: int
    last_update_step: int
    update_steps: list
    lip_tighter: int
    lip_total: int
    prior_use: list
    maxqinit_active: bool


@dataclass
class RunRecord:
    """Everything logged by :func:`run_lifelong`.

    ``returns`` has shape ``(repeats, agents, tasks, episodes)``; entries of
    a failed repeat are NaN. ``logs[r][i][t]`` is the :class:`TaskLog` of
    agent ``i`` on task ``t`` of repeat ``r`` (``None`` if it failed).
    """

    config: LifelongConfig
    returns: np.ndarray
    task_ids: np.ndarray
    optimal: np.ndarray
    logs: list
    failures: dict = field(default_factory=dict)
    libraries: dict = field(default_factory=dict)

    @property
    def labels(self) -> list:
        return self.config.labels

    @property
    def ok_repeats(self) -> list:
        return [r for r in range(self.config.n_repeats) if r not in self.failures]

    def relative_returns(self) -> np.ndarray:
        opt = self.optimal[:, None, :, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(opt > 0, self.returns / opt, np.nan)

    def agent_index(self, label: str) -> int:
        return self.labels.index(label)


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def task_sequence(cfg: LifelongConfig, repeat: int):
    """The tasks of one repeat, as ``[(mdp, task_id), ...]``."""
    rng = _rng(cfg.seed, repeat, _TASK_STREAM)
    return [sample_task(cfg.distribution, rng, t) for t in range(cfg.n_tasks)]


def optimal_return_estimate(task: TabularMdp, episode_len: int, eps_q: float = 1e-6) -> float:
    """Expected discounted return over ``episode_len`` steps of the greedy
    policy of value iteration, from the initial state, evaluated exactly."""
    q = dp.value_iteration(task, eps_q)
    policy = np.argmax(q, axis=1)
    states = np.arange(task.n_states)
    r_pi = task.reward[states, policy]
    T_pi = task.transition[states, policy]
    dist = np.zeros(task.n_states)
    dist[task.initial_state] = 1.0
    total, discount = 0.0, 1.0
    for _ in range(episode_len):
        total += discount * float(dist @ r_pi)
        dist = dist @ T_pi
        discount *= task.discount
    return total


class _Env:
    """Sampling view of a tabular task."""

    def __init__(self, task: TabularMdp, rng: np.random.Generator):
        self.reward = task.reward
        self.cdf = np.cumsum(task.transition, axis=2)
        self.cdf[:, :, -1] = 1.0
        self.initial_state = task.initial_state
        self.rng = rng

    def step(self, s: int, a: int):
        s_next = int(np.searchsorted(self.cdf[s, a], self.rng.random(), side="right"))
        return float(self.reward[s, a]), s_next


def run_agent_on_task(agent: Agent, task: TabularMdp, rng, n_episodes: int, episode_len: int) -> TaskLog:
    env = _Env(task, rng)
    gamma = task.discount
    discounts = gamma ** np.arange(episode_len)
    agent.new_task(task.n_states, task.n_actions, task.initial_state)
    returns = np.empty(n_episodes)
    update_steps = []
    rewards = np.empty(episode_len)
    for ep in range(n_episodes):
        s = env.initial_state
        for t in range(episode_len):
            a = agent.act(s)
            r, s_next = env.step(s, a)
            if agent.observe(s, a, r, s_next):
                update_steps.append(agent.stats.steps)
            rewards[t] = r
            s = s_next
        returns[ep] = float(rewards @ discounts)
    stats = agent.stats
    agent.end_task()
    return TaskLog(
        returns=returns,
        n_updates=stats.n_updates,
        last_update_step=stats.last_update_step,
        update_steps=update_steps,
        lip_tighter=stats.lip_tighter,
        lip_total=stats.lip_total,
        prior_use=list(stats.prior_use),
        maxqinit_active=stats.maxqinit_active,
    )


def run_repeat(cfg: LifelongConfig, repeat: int):
    """One repeat for every agent. Returns ``(task_ids, optimal, logs, libraries)``."""
    tasks = task_sequence(cfg, repeat)
    task_ids = np.array([k for _, k in tasks])
    optimal = np.array([optimal_return_estimate(m, cfg.episode_len) for m, _ in tasks])
    logs, libraries = [], []
    for agent_cfg in cfg.agents:
        agent = Agent(agent_cfg, TaskLibrary())
        agent_logs = []
        for t, (task, _) in enumerate(tasks):
            rng = _rng(cfg.seed, repeat, _ENV_STREAM, t)
            agent_logs.append(run_agent_on_task(agent, task, rng, cfg.n_episodes, cfg.episode_len))
        logs.append(agent_logs)
        libraries.append(agent.library)
    return task_ids, optimal, logs, libraries


def _safe_repeat(cfg, repeat):
    try:
        return repeat, run_repeat(cfg, repeat), None
    except Exception:  # noqa: BLE001 - a failed repeat must not sink the others
        return repeat, None, traceback.format_exc()


def run_lifelong(cfg: LifelongConfig, jobs: int = 1, library_repeats=()) -> RunRecord:
    """Run every agent on every repeat. Repeats run in parallel when ``jobs > 1``.

    Task libraries are kept in the record for the repeats in ``library_repeats``.
    """
    R, N, T, E = cfg.n_repeats, len(cfg.agents), cfg.n_tasks, cfg.n_episodes
    returns = np.full((R, N, T, E), np.nan)
    task_ids = np.full((R, T), -1, dtype=int)
    optimal = np.full((R, T), np.nan)
    logs = [None] * R
    failures, libraries = {}, {}

    if jobs > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, R)) as pool:
            results = list(pool.map(_safe_repeat, [cfg] * R, range(R)))
    else:
        results = [_safe_repeat(cfg, r) for r in range(R)]

    for r, result, err in results:
        if err is not None:
            log.error("repeat %d failed:\n%s", r, err)
            failures[r] = err
            continue
        ids, opt, rep_logs, libs = result
        task_ids[r], optimal[r], logs[r] = ids, opt, rep_logs
        for i, agent_logs in enumerate(rep_logs):
            for t, tl in enumerate(agent_logs):
                returns[r, i, t] = tl.returns
        if r in library_repeats:
            libraries[r] = libs
    return RunRecord(cfg, returns, task_ids, optimal, logs, failures, libraries)


# -- statistics ------------------------------------------------------------

def mean_ci(samples, axis: int = 0):
    """Mean and 95% normal-approximation half-width ``1.96 * stderr``.

    NaN samples are dropped. With one sample the half-width is 0.
    """
    x = np.asarray(samples, dtype=float)
    n = np.sum(~np.isnan(x), axis=axis)
    mean = np.nanmean(x, axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.nanstd(x, axis=axis, ddof=1) if n.size and np.max(n) > 1 else np.zeros_like(mean)
        half = np.where(n > 1, 1.96 * sd / np.sqrt(np.maximum(n, 1)), 0.0)
    return mean, half


def moving_average(x, window: int = 100):
    """Trailing moving average; the first points average the available prefix."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0, axis=-1), axis=-1)
    n = x.shape[-1]
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    return (c[..., idx] - c[..., lo]) / (idx - lo)


def summarize(record: RunRecord, window: int = 100) -> dict:
    """Per-task and per-episode mean curves with 95% confidence intervals.

    ``per_task[label]`` holds the mean relative return over episodes for
    each task index; ``per_episode[label]`` the moving-averaged relative
    return over episodes, pooled over tasks.
    """
    rel = record.relative_returns()
    ok = record.ok_repeats
    out = {"per_task": {}, "per_episode": {}}
    for i, label in enumerate(record.labels):
        per_task = rel[ok, i].mean(axis=2)  # (repeats, tasks)
        out["per_task"][label] = mean_ci(per_task)
        per_ep = moving_average(rel[ok, i].mean(axis=1), window)  # (repeats, episodes)
        out["per_episode"][label] = mean_ci(per_ep)
    return out


def prior_use_curve(per_repeat):
    """Mean and CI over repeats of the prior use at each model update.

    Repeats can see different numbers of updates; update ``k`` averages the
    repeats that reached it, and ``n[k]`` counts them.
    """
    length = max((len(u) for u in per_repeat), default=0)
    table = np.full((len(per_repeat), length), np.nan)
    for k, u in enumerate(per_repeat):
        table[k, : len(u)] = u
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean, ci = mean_ci(table)
    return mean, ci, np.sum(~np.isnan(table), axis=0)


def _baseline_index(record: RunRecord) -> int:
    for i, a in enumerate(record.config.agents):
        if a.variant == "rmax":
            return i
    raise ValueError("diagnostics need an RMax baseline agent in the run")


def diagnostics(record: RunRecord) -> dict:
    """Transfer diagnostics of every agent against the RMax baseline.

    Returns ``{label: {...}}`` with ``rho_lip``, ``rho_speedup``,
    ``rho_return``, ``prior_use`` (overall fraction) and
    ``prior_use_curve``, which maps a task index to the per-update
    ``(mean, ci, n)`` arrays of :func:`prior_use_curve`.
    """
    base = _baseline_index(record)
    ok = record.ok_repeats
    if not ok:
        raise ValueError("no completed repeats")
    cfg = record.config

    def total_last_update(i):
        return sum(record.logs[r][i][t].last_update_step for r in ok for t in range(cfg.n_tasks))

    base_steps = total_last_update(base)
    base_return = float(np.sum(record.returns[ok, base]))
    out = {}
    for i, agent_cfg in enumerate(cfg.agents):
        logs = [record.logs[r][i][t] for r in ok for t in range(cfg.n_tasks)]
        lip_total = sum(tl.lip_total for tl in logs)
        rho_lip = sum(tl.lip_tighter for tl in logs) / lip_total if lip_total else math.nan
        steps = total_last_update(i)
        rho_speed = (base_steps - steps) / base_steps if base_steps else math.nan
        ret = float(np.sum(record.returns[ok, i]))
        rho_ret = (ret - base_return) / base_return if base_return else math.nan
        uses = [u for tl in logs for u in tl.prior_use]
        curve = {}
        for t in range(cfg.n_tasks):
            per_repeat = [record.logs[r][i][t].prior_use for r in ok]
            if any(per_repeat):
                curve[t] = prior_use_curve(per_repeat)
        out[agent_cfg.label] = {
            "d_prior": agent_cfg.distance.d_prior if agent_cfg.variant in LIPSCHITZ_VARIANTS else None,
            "rho_lip": rho_lip,
            "rho_speedup": rho_speed,
            "rho_return": rho_ret,
            "prior_use": float(np.mean(uses)) if uses else math.nan,
            "prior_use_curve": curve,
        }
    return out


# -- export ----------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def write_record(record: RunRecord, out_dir) -> dict:
    """Write the CSV files of a run; returns ``{name: path}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = record.config
    rel = record.relative_returns()
    paths = {}

    def returns_rows():
        for r in range(cfg.n_repeats):
            for i, label in enumerate(record.labels):
                for t in range(cfg.n_tasks):
                    tid = int(record.task_ids[r, t])
                    for e in range(cfg.n_episodes):
                        yield (r, label, t, tid, e, record.returns[r, i, t, e], rel[r, i, t, e])

    paths["returns"] = out / "returns.csv"
    _write(paths["returns"], RETURNS_HEADER, returns_rows())

    def task_rows():
        for r in record.ok_repeats:
            for i, label in enumerate(record.labels):
                for t in range(cfg.n_tasks):
                    tl = record.logs[r][i][t]
                    pu = float(np.mean(tl.prior_use)) if tl.prior_use else None
                    yield (r, label, t, int(record.task_ids[r, t]), record.optimal[r, t], tl.n_updates,
                           tl.last_update_step, tl.lip_tighter, tl.lip_total, pu, tl.maxqinit_active)

    paths["tasks"] = out / "tasks.csv"
    _write(paths["tasks"], TASKS_HEADER, task_rows())

    def event_rows():
        for r in record.ok_repeats:
            for i, label in enumerate(record.labels):
                for t in range(cfg.n_tasks):
                    for k, step in enumerate(record.logs[r][i][t].update_steps):
                        yield (r, label, t, k, step)

    paths["events"] = out / "events.csv"
    _write(paths["events"], EVENTS_HEADER, event_rows())

    try:
        diag = diagnostics(record)
    except ValueError as exc:
        log.warning("skipping diagnostics: %s", exc)
        diag = None
    if diag is not None:
        paths["diagnostics"] = out / "diagnostics.csv"
        _write(paths["diagnostics"], DIAGNOSTICS_HEADER,
               ((lab, d["d_prior"], d["rho_lip"], d["rho_speedup"], d["rho_return"]) for lab, d in diag.items()))

        def prior_rows():
            for lab, d in diag.items():
                for t, (mean, ci, n) in d["prior_use_curve"].items():
                    for k in range(len(mean)):
                        yield (lab, t, k, mean[k], ci[k], n[k])

        paths["prior_use"] = out / "prior_use.csv"
        _write(paths["prior_use"], PRIOR_USE_HEADER, prior_rows())
    return paths


def write_libraries(record: RunRecord, out_dir, repeat: int = 0) -> list:
    """Save the task library each agent built in ``repeat`` as JSON files."""
    libs = record.libraries.get(repeat)
    if libs is None:
        return []
    written = []
    for label, lib in zip(record.labels, libs):
        d = Path(out_dir) / "library" / _slug(label)
        d.mkdir(parents=True, exist_ok=True)
        for k, entry in enumerate(lib.entries):
            p = d / f"task_{k:03d}.json"
            save_learned_task(entry, p)
            written.append(p)
    return written


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label).strip("_")
