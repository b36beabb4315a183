"""Experiment configuration files (YAML) to and from :class:`LifelongConfig`."""

from __future__ import annotations

import math
from pathlib import Path

import yaml

from . import dp
from .agents import MAXQINIT_VARIANTS, VARIANTS, AgentConfig, maxqinit_threshold
from .envs import FAMILIES, TaskDistribution
from .lifelong import LifelongConfig
from .metrics import TRANSITION_MAX_METHODS, DistanceConfig, dmax_confident

TOP_KEYS = {"seed", "gamma", "n_tasks", "n_episodes", "episode_len", "n_repeats", "distribution", "agent_defaults", "agents"}
DIST_KEYS = {"family", "support_size", "seed", "sequential", "reward_range", "slip_range", "size"}
AGENT_KEYS = {
    "variant", "name", "n_known", "eps_q", "epsilon", "delta", "d_prior",
    "use_online_dmax", "p_min", "transition_max", "maxqinit_delta",
}

DEFAULTS = {
    "seed": 0,
    "gamma": 0.9,
    "n_tasks": 15,
    "n_episodes": 2000,
    "episode_len": 10,
    "n_repeats": 10,
}
AGENT_DEFAULTS = {
    "n_known": 10,
    "eps_q": dp.DEFAULT_EPS_Q,
    "epsilon": 0.01,
    "delta": 0.05,
    "d_prior": None,
    "use_online_dmax": False,
    "p_min": None,
    "transition_max": "exact",
    "maxqinit_delta": 0.1,
    "name": None,
}


class ConfigError(ValueError):
    """A configuration problem, tied to the offending field."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


def _check_keys(doc, allowed, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown field")


def _int(doc, key, prefix, minimum=1):
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{prefix}{key}", f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{prefix}{key}", f"must be >= {minimum}, got {value}")
    return value


def _float(doc, key, prefix, lo=None, hi=None, hi_open=False, allow_none=False):
    value = doc[key]
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{prefix}{key}", f"expected a finite number, got {value!r}")
    value = float(value)
    if lo is not None and value < lo:
        raise ConfigError(f"{prefix}{key}", f"must be >= {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        bound = f"< {hi}" if hi_open else f"<= {hi}"
        raise ConfigError(f"{prefix}{key}", f"must be {bound}, got {value}")
    return value


def _pair(doc, key, prefix):
    value = doc[key]
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{prefix}{key}", "expected [low, high]")
    lo, hi = (_float({key: v}, key, prefix, 0.0, 1.0) for v in value)
    if lo > hi:
        raise ConfigError(f"{prefix}{key}", "low must not exceed high")
    return (lo, hi)


def parse_config(doc: dict, seed_override: int | None = None) -> LifelongConfig:
    """Build a validated :class:`LifelongConfig` from a parsed document."""
    _check_keys(doc, TOP_KEYS, "")
    top = {**DEFAULTS, **{k: v for k, v in doc.items() if k in DEFAULTS}}
    for key in ("n_tasks", "n_episodes", "episode_len", "n_repeats"):
        _int(top, key, "")
    _int(top, "seed", "", minimum=0)
    if seed_override is not None:
        top["seed"] = int(seed_override)
    gamma = _float(top, "gamma", "", 0.0, 1.0, hi_open=True)

    dist_doc = doc.get("distribution", {}) or {}
    _check_keys(dist_doc, DIST_KEYS, "distribution.")
    family = dist_doc.get("family", "tight")
    if family not in FAMILIES:
        raise ConfigError("distribution.family", f"must be one of {list(FAMILIES)}, got {family!r}")
    dist_kw = {"family": family, "gamma": gamma}
    if dist_doc.get("support_size") is not None:
        dist_kw["support_size"] = _int(dist_doc, "support_size", "distribution.")
    if "seed" in dist_doc:
        dist_kw["seed"] = _int(dist_doc, "seed", "distribution.", minimum=0)
    if "sequential" in dist_doc:
        if not isinstance(dist_doc["sequential"], bool):
            raise ConfigError("distribution.sequential", "expected true or false")
        dist_kw["sequential"] = dist_doc["sequential"]
    for key in ("reward_range", "slip_range"):
        if key in dist_doc:
            dist_kw[key] = _pair(dist_doc, key, "distribution.")
    if dist_doc.get("size") is not None:
        dist_kw["size"] = _int(dist_doc, "size", "distribution.", minimum=2)
    try:
        dist = TaskDistribution(**dist_kw)
    except ValueError as exc:
        raise ConfigError("distribution", str(exc)) from None

    defaults_doc = doc.get("agent_defaults", {}) or {}
    _check_keys(defaults_doc, AGENT_KEYS - {"variant", "name"}, "agent_defaults.")
    agent_docs = doc.get("agents")
    if not agent_docs:
        raise ConfigError("agents", "at least one agent is required")
    if not isinstance(agent_docs, list):
        raise ConfigError("agents", "expected a list")
    agents = [
        _parse_agent({**defaults_doc, **(a or {})}, f"agents[{i}].", gamma, dist) for i, a in enumerate(agent_docs)
    ]
    try:
        return LifelongConfig(
            distribution=dist,
            n_tasks=top["n_tasks"],
            n_episodes=top["n_episodes"],
            episode_len=top["episode_len"],
            n_repeats=top["n_repeats"],
            agents=tuple(agents),
            seed=top["seed"],
        )
    except ValueError as exc:
        raise ConfigError("agents", str(exc)) from None


def _parse_agent(doc, prefix, gamma, dist) -> AgentConfig:
    _check_keys(doc, AGENT_KEYS, prefix)
    variant = doc.get("variant")
    if variant not in VARIANTS:
        raise ConfigError(f"{prefix}variant", f"must be one of {list(VARIANTS)}, got {variant!r}")
    a = {**AGENT_DEFAULTS, **doc}
    p_min = a["p_min"]
    if p_min is None and variant in MAXQINIT_VARIANTS:
        p_min = dist.p_min
        if p_min is None:
            raise ConfigError(f"{prefix}p_min", "required for MaxQInit on an infinite task family")
    dist_cfg_kw = {
        "epsilon": _float(a, "epsilon", prefix, 0.0),
        "delta": _float(a, "delta", prefix, 0.0, 1.0, hi_open=True),
        "d_prior": _float(a, "d_prior", prefix, 0.0, allow_none=True),
        "p_min": None if p_min is None else _float({"p_min": p_min}, "p_min", prefix, 0.0, 1.0),
        "transition_max": a["transition_max"],
    }
    if a["transition_max"] not in TRANSITION_MAX_METHODS:
        raise ConfigError(f"{prefix}transition_max", f"must be one of {list(TRANSITION_MAX_METHODS)}")
    if not isinstance(a["use_online_dmax"], bool):
        raise ConfigError(f"{prefix}use_online_dmax", "expected true or false")
    dist_cfg_kw["use_online_dmax"] = a["use_online_dmax"]
    if a["name"] is not None and not isinstance(a["name"], str):
        raise ConfigError(f"{prefix}name", "expected a string")
    try:
        distance = DistanceConfig(**dist_cfg_kw)
    except ValueError as exc:
        raise ConfigError(prefix.rstrip("."), str(exc)) from None
    try:
        return AgentConfig(
            variant=variant,
            gamma=gamma,
            n_known=_int(a, "n_known", prefix),
            eps_q=_float(a, "eps_q", prefix, 0.0),
            distance=distance,
            maxqinit_delta=_float(a, "maxqinit_delta", prefix, 0.0, 1.0),
            name=a["name"],
        )
    except ValueError as exc:
        raise ConfigError(prefix.rstrip("."), str(exc)) from None


def load_config(path, seed_override: int | None = None) -> LifelongConfig:
    """Read and validate a YAML config file. Raises :class:`ConfigError`."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError("<yaml>", str(getattr(exc, "problem", exc)), line) from None
    if doc is None:
        doc = {}
    try:
        return parse_config(doc, seed_override)
    except ConfigError as exc:
        if exc.line is None:
            exc.line = _find_line(text, exc.field)
            if exc.line is not None:
                exc.args = (f"line {exc.line}: {exc.args[0]}",)
        raise


def _find_line(text: str, field: str) -> int | None:
    key = field.split(".")[-1].split("[")[0]
    for i, line in enumerate(text.splitlines(), 1):
        stripped = line.strip().lstrip("- ")
        if stripped.startswith(f"{key}:"):
            return i
    return None


def config_to_dict(cfg: LifelongConfig) -> dict:
    """Fully resolved document; :func:`parse_config` maps it back to ``cfg``."""
    d = cfg.distribution
    dist = {
        "family": d.family,
        "support_size": d.support_size,
        "seed": d.seed,
        "sequential": d.sequential,
        "reward_range": list(d.reward_range),
        "slip_range": list(d.slip_range),
        "size": d.size,
    }
    agents = []
    for a in cfg.agents:
        agents.append({
            "variant": a.variant,
            "name": a.name,
            "n_known": a.n_known,
            "eps_q": a.eps_q,
            "epsilon": a.distance.epsilon,
            "delta": a.distance.delta,
            "d_prior": a.distance.d_prior,
            "use_online_dmax": a.distance.use_online_dmax,
            "p_min": a.distance.p_min,
            "transition_max": a.distance.transition_max,
            "maxqinit_delta": a.maxqinit_delta,
        })
    return {
        "seed": cfg.seed,
        "gamma": d.gamma,
        "n_tasks": cfg.n_tasks,
        "n_episodes": cfg.n_episodes,
        "episode_len": cfg.episode_len,
        "n_repeats": cfg.n_repeats,
        "distribution": dist,
        "agents": agents,
    }


def derived_quantities(cfg: LifelongConfig) -> dict:
    """Thresholds implied by a config, recorded next to the results."""
    gamma = cfg.distribution.gamma
    out = {"ceiling": 1.0 / (1.0 - gamma), "agents": {}}
    for a in cfg.agents:
        info = {
            "label": a.label,
            "vi_iteration_budget": dp.vi_iteration_budget(gamma, a.eps_q),
            "max_model_distance": (1.0 + gamma) / (1.0 - gamma),
        }
        if a.distance.p_min is not None:
            p, dl = a.distance.p_min, a.distance.delta
            m = 1
            while not dmax_confident(m, p, dl) and m < 10_000:
                m += 1
            info["dmax_confident_after_tasks"] = m
            if a.variant in MAXQINIT_VARIANTS:
                info["maxqinit_threshold"] = maxqinit_threshold(p, a.maxqinit_delta)
        out["agents"][a.label] = info
    out["optimal_return_estimator"] = (
        "exact expected discounted return over episode_len steps of the greedy policy "
        "of value iteration (eps_q=1e-6), from the initial state"
    )
    return out
