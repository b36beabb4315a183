"""Tabular MDPs, known-set bookkeeping and saved task knowledge."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
ROW_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when a tabular model breaks one of its invariants."""


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMdp:
    """Ground-truth finite MDP.

    ``reward[s, a]`` is the expected reward, ``transition[s, a, s']`` the
    probability of reaching ``s'``. Arrays are copied and made read-only.
    """

    reward: np.ndarray
    transition: np.ndarray
    discount: float
    initial_state: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.reward.shape

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "tabular_mdp",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "initial_state": self.initial_state,
            "reward": self.reward.ravel().tolist(),
            "transition": self.transition.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        _check_doc(doc, "tabular_mdp")
        S, A = doc["n_states"], doc["n_actions"]
        return cls(
            reward=np.asarray(doc["reward"], dtype=float).reshape(S, A),
            transition=np.asarray(doc["transition"], dtype=float).reshape(S, A, S),
            discount=doc["discount"],
            initial_state=doc["initial_state"],
        )


def validate(mdp: TabularMdp) -> str | None:
    """Return a description of the first violated invariant, or None if ok."""
    R, T = mdp.reward, mdp.transition
    if R.ndim != 2 or R.shape[0] < 1 or R.shape[1] < 1:
        return f"reward table must be (S, A) with S, A >= 1, got {R.shape}"
    S, A = R.shape
    if T.shape != (S, A, S):
        return f"transition tensor must be {(S, A, S)}, got {T.shape}"
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(T))):
        return "non-finite entry in reward or transition"
    if not 0.0 <= mdp.discount < 1.0:
        return f"discount {mdp.discount} out of [0, 1)"
    if not 0 <= mdp.initial_state < S:
        return f"initial state {mdp.initial_state} out of range"
    bad = np.argwhere((R < 0.0) | (R > 1.0))
    if len(bad):
        s, a = bad[0]
        return f"reward out of [0,1] at (s={s}, a={a}): {R[s, a]}"
    bad = np.argwhere((T < -ROW_TOL) | (T > 1.0 + ROW_TOL))
    if len(bad):
        s, a, s2 = bad[0]
        return f"transition probability out of [0,1] at (s={s}, a={a}, s'={s2})"
    sums = T.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if len(bad):
        s, a = bad[0]
        return f"transition row (s={s}, a={a}) sums to {sums[s, a]!r}, not 1"
    return None


def check_pair_function(values, shape=None, name="pair function") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"{name} must be indexed (s, a), got shape {values.shape}")
    if shape is not None and values.shape != tuple(shape):
        raise ValueError(f"{name} has shape {values.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} has non-finite entries")
    return values


@dataclass
class KnownSet:
    """Visit counts and known flags per state-action pair.

    A pair is flagged known when its count reaches ``n_known``. ``mask`` is
    kept explicitly so saved knowledge can be checked against the counts.
    """

    counts: np.ndarray
    n_known: int = 10
    mask: np.ndarray = None

    def __post_init__(self):
        if self.n_known < 1:
            raise ValueError("n_known must be a positive integer")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.mask is None:
            self.mask = self.counts >= self.n_known
        else:
            self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def empty(cls, n_states: int, n_actions: int, n_known: int = 10) -> "KnownSet":
        return cls(np.zeros((n_states, n_actions), dtype=np.int64), n_known)

    @classmethod
    def from_mask(cls, mask, n_known: int = 10) -> "KnownSet":
        """Known set whose counts sit exactly at the threshold on known pairs."""
        mask = np.asarray(mask, dtype=bool)
        return cls(np.where(mask, n_known, 0), n_known, mask.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape

    def visit(self, s: int, a: int) -> int:
        """Increment the visit count of ``(s, a)``; return the new count."""
        self.counts[s, a] += 1
        n = int(self.counts[s, a])
        if n >= self.n_known:
            self.mask[s, a] = True
        return n

    def is_known(self, s: int, a: int) -> bool:
        return bool(self.mask[s, a])

    def check(self):
        bad = np.argwhere(self.mask & (self.counts < self.n_known))
        if len(bad):
            s, a = bad[0]
            raise ValidationError(
                f"pair (s={s}, a={a}) is marked known with {self.counts[s, a]} "
                f"visits < n_known={self.n_known}"
            )
        bad = np.argwhere(~self.mask & (self.counts >= self.n_known))
        if len(bad):
            s, a = bad[0]
            raise ValidationError(f"pair (s={s}, a={a}) reached n_known but is not flagged known")

    def copy(self) -> "KnownSet":
        return KnownSet(self.counts.copy(), self.n_known, self.mask.copy())


@dataclass
class EmpiricalAccumulator:
    """Running sums of reward and transition samples, per pair."""

    reward_sums: np.ndarray
    transition_counts: np.ndarray
    n_samples: np.ndarray = field(default=None)

    def __post_init__(self):
        self.reward_sums = np.asarray(self.reward_sums, dtype=float)
        self.transition_counts = np.asarray(self.transition_counts, dtype=np.int64)
        if self.n_samples is None:
            self.n_samples = self.transition_counts.sum(axis=2)
        self.n_samples = np.asarray(self.n_samples, dtype=np.int64)

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> "EmpiricalAccumulator":
        return cls(
            np.zeros((n_states, n_actions)),
            np.zeros((n_states, n_actions, n_states), dtype=np.int64),
        )

    def add(self, s: int, a: int, r: float, s_next: int):
        self.reward_sums[s, a] += r
        self.transition_counts[s, a, s_next] += 1
        self.n_samples[s, a] += 1

    def empirical_model(self, known: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(R_hat, T_hat)``; unknown pairs get the optimistic self-loop.

        An unknown pair is modelled as a loop onto its own state paying
        reward 1, which solves to exactly ``1 / (1 - gamma)``.
        """
        S, A = self.reward_sums.shape
        known = np.asarray(known, dtype=bool)
        if np.any(self.n_samples[known] == 0):
            raise ValidationError("known pair without samples")
        n = np.where(known, self.n_samples, 1)
        R = np.where(known, self.reward_sums / n, 1.0)
        T = self.transition_counts / n[:, :, None]
        loops = optimistic_self_loops(S, A)
        T = np.where(known[:, :, None], T, loops)
        return R, T


def optimistic_self_loops(n_states: int, n_actions: int) -> np.ndarray:
    T = np.zeros((n_states, n_actions, n_states))
    T[np.arange(n_states), :, np.arange(n_states)] = 1.0
    return T


@dataclass(frozen=True)
class LearnedTask:
    """What an agent keeps about a task: empirical model, known set, Q bound."""

    model: TabularMdp
    known: KnownSet
    q_bound: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_bound", _frozen(self.q_bound))
        known = self.known.copy()
        known.counts.setflags(write=False)
        known.mask.setflags(write=False)
        object.__setattr__(self, "known", known)

    @property
    def discount(self) -> float:
        return self.model.discount

    @property
    def shape(self) -> tuple[int, int]:
        return self.model.shape

    @property
    def reward(self) -> np.ndarray:
        return self.model.reward

    @property
    def transition(self) -> np.ndarray:
        return self.model.transition

    @property
    def known_mask(self) -> np.ndarray:
        return self.known.mask

    @property
    def state_values(self) -> np.ndarray:
        return self.q_bound.max(axis=1)

    @property
    def v_max(self) -> float:
        return float(self.q_bound.max())

    def to_dict(self) -> dict:
        S, A = self.shape
        return {
            "format_version": FORMAT_VERSION,
            "kind": "learned_task",
            "n_states": S,
            "n_actions": A,
            "discount": self.discount,
            "initial_state": self.model.initial_state,
            "n_known": self.known.n_known,
            "reward": self.reward.ravel().tolist(),
            "transition": self.transition.ravel().tolist(),
            "counts": self.known.counts.ravel().tolist(),
            "known": self.known.mask.ravel().astype(int).tolist(),
            "q_bound": self.q_bound.ravel().tolist(),
            "v_max": self.v_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LearnedTask":
        _check_doc(doc, "learned_task")
        S, A = doc["n_states"], doc["n_actions"]
        model = TabularMdp(
            np.asarray(doc["reward"], dtype=float).reshape(S, A),
            np.asarray(doc["transition"], dtype=float).reshape(S, A, S),
            doc["discount"],
            doc["initial_state"],
        )
        known = KnownSet(
            np.asarray(doc["counts"], dtype=np.int64).reshape(S, A),
            doc["n_known"],
            np.asarray(doc["known"], dtype=bool).reshape(S, A),
        )
        return cls(model, known, np.asarray(doc["q_bound"], dtype=float).reshape(S, A))


def freeze_learned_task(
    acc: EmpiricalAccumulator,
    known: KnownSet,
    q_bound,
    discount: float,
    initial_state: int = 0,
) -> LearnedTask:
    """Snapshot an agent's knowledge of a task.

    Raises ValidationError if a pair is flagged known below the visit
    threshold, or if ``q_bound`` exceeds ``1 / (1 - discount)``.
    """
    known.check()
    S, A = known.shape
    q_bound = check_pair_function(q_bound, (S, A), "q_bound")
    ceiling = 1.0 / (1.0 - discount)
    if np.any(q_bound > ceiling + 1e-9):
        raise ValidationError(f"q_bound exceeds 1/(1-gamma) = {ceiling}")
    R, T = acc.empirical_model(known.mask)
    model = TabularMdp(R, T, discount, initial_state)
    return LearnedTask(model, known, np.minimum(q_bound, ceiling))


def _check_doc(doc: dict, kind: str):
    if doc.get("kind") != kind:
        raise ValidationError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported format_version {doc.get('format_version')!r}")


def save_learned_task(task: LearnedTask, path):
    Path(path).write_text(json.dumps(task.to_dict()))


def load_learned_task(path) -> LearnedTask:
    return LearnedTask.from_dict(json.loads(Path(path).read_text()))


def load_library(path) -> list[LearnedTask]:
    """Load every ``*.json`` learned task under a directory, in name order."""
    path = Path(path)
    if path.is_file():
        return [load_learned_task(path)]
    return [load_learned_task(p) for p in sorted(path.glob("*.json"))]
