"""Grid-world task families: tight, corridor, maze and heat-map."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import TabularMdp

MOVES = {"up": (-1, 0), "right": (0, 1), "down": (1, 0), "left": (0, -1)}
CARDINAL = ("up", "right", "down", "left")
FAMILIES = ("tight", "corridor", "maze", "heatmap")


@dataclass(frozen=True)
class GridSpec:
    """A grid world. Cells are ``(row, col)`` with row 0 at the top.

    ``goals`` maps a cell to the reward paid for any action taken in it.
    With probability ``slip`` the move of a uniformly drawn other action is
    executed instead of the chosen one.
    """

    width: int
    height: int
    start: tuple
    goals: dict
    walls: frozenset = frozenset()
    slip: float = 0.0
    actions: tuple = CARDINAL
    layout_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(c) for c in self.walls))
        object.__setattr__(self, "start", tuple(self.start))
        object.__setattr__(self, "goals", {tuple(c): float(r) for c, r in self.goals.items()})
        problem = self.check()
        if problem:
            raise ValueError(problem)

    def check(self) -> str | None:
        if self.width < 1 or self.height < 1:
            return "grid must be at least 1x1"
        if not 0.0 <= self.slip <= 1.0:
            return f"slip {self.slip} out of [0, 1]"
        if not self.in_bounds(self.start) or self.start in self.walls:
            return f"start {self.start} is outside the grid or a wall"
        for cell, r in self.goals.items():
            if not self.in_bounds(cell) or cell in self.walls:
                return f"goal {cell} is outside the grid or a wall"
            if not 0.0 <= r <= 1.0:
                return f"goal reward {r} at {cell} out of [0, 1]"
        for a in self.actions:
            if a not in MOVES:
                return f"unknown action {a!r}"
        return None

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def cells(self) -> list:
        """Free cells, row-major."""
        return [(r, c) for r in range(self.height) for c in range(self.width) if (r, c) not in self.walls]


def build_mdp(spec: GridSpec, gamma: float, cells=None) -> TabularMdp:
    """Tabular model of a grid world.

    ``cells`` fixes the state enumeration, so that tasks of one family with
    different walls share a state space; a listed cell that is a wall in
    this layout becomes an unreachable self-looping state.
    """
    cells = list(spec.cells() if cells is None else cells)
    index = {c: i for i, c in enumerate(cells)}
    if spec.start not in index:
        raise ValueError("start cell is not a state")
    S, A = len(cells), len(spec.actions)
    deltas = [MOVES[a] for a in spec.actions]
    T = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for i, cell in enumerate(cells):
        if cell in spec.walls:
            T[i, :, i] = 1.0
            continue
        R[i, :] = spec.goals.get(cell, 0.0)
        targets = []
        for dr, dc in deltas:
            nxt = (cell[0] + dr, cell[1] + dc)
            ok = spec.in_bounds(nxt) and nxt not in spec.walls and nxt in index
            targets.append(index[nxt] if ok else i)
        for a in range(A):
            if A == 1:
                T[i, a, targets[a]] += 1.0
                continue
            T[i, a, targets[a]] += 1.0 - spec.slip
            for b in range(A):
                if b != a:
                    T[i, a, targets[b]] += spec.slip / (A - 1)
    return TabularMdp(R, T, gamma, index[spec.start])


def state_labels(spec: GridSpec, cells=None) -> dict:
    cells = list(spec.cells() if cells is None else cells)
    return dict(enumerate(cells))


# -- layouts ---------------------------------------------------------------

def tight_spec(goal_rewards=(1.0, 1.0, 1.0), slip: float = 0.0, size: int = 11) -> GridSpec:
    """Open ``size x size`` grid, start in the centre, three goals top-right."""
    goal_cells = [(0, size - 1), (0, size - 2), (1, size - 1)]
    return GridSpec(
        width=size,
        height=size,
        start=(size // 2, size // 2),
        goals=dict(zip(goal_cells, goal_rewards)),
        slip=slip,
        layout_id="tight",
    )


def corridor_spec(reward: float = 1.0, length: int = 11) -> GridSpec:
    """One-row corridor, start in the middle, goal at the right end."""
    return GridSpec(
        width=length,
        height=1,
        start=(0, length // 2),
        goals={(0, length - 1): reward},
        actions=("left", "right"),
        layout_id="corridor",
    )


# Hand-drawn stand-in for the two maze variants. 'o' cells are walls in
# variant A only, 'g' cells in variant B only.
MAZE_TEMPLATE = """\
G . . . . . .
# o # # # g #
. . . . . . .
. . . S . . .
. # # . # # .
. . . . . . .
. . . . . . .
"""

HEATMAP_TEMPLATE = """\
S . . .
. # . .
. . # .
. . . G
"""


def _parse_grid(text: str):
    rows = [line.split() for line in text.strip("\n").splitlines() if line.strip()]
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged grid rows")
    return rows


def maze_specs(reward: float = 1.0) -> list:
    rows = _parse_grid(MAZE_TEMPLATE)
    specs = []
    for variant, blocked in (("A", "o"), ("B", "g")):
        walls, goals, start = set(), {}, None
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                if ch == "#" or ch == blocked:
                    walls.add((r, c))
                elif ch == "S":
                    start = (r, c)
                elif ch == "G":
                    goals[(r, c)] = reward
        specs.append(
            GridSpec(len(rows[0]), len(rows), start, goals, frozenset(walls), layout_id=f"maze-{variant}")
        )
    return specs


def maze_cells() -> list:
    rows = _parse_grid(MAZE_TEMPLATE)
    return [(r, c) for r, row in enumerate(rows) for c, ch in enumerate(row) if ch != "#"]


def heatmap_spec(sigma: float, slip: float, layout: str = HEATMAP_TEMPLATE) -> GridSpec:
    """Every free cell pays ``exp(-|cell - goal|^2 / (2 sigma^2))``."""
    rows = _parse_grid(layout)
    walls, start, goal = set(), None, None
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                start = (r, c)
            elif ch == "G":
                goal = (r, c)
    goals = {}
    for r in range(len(rows)):
        for c in range(len(rows[0])):
            if (r, c) not in walls:
                d2 = (r - goal[0]) ** 2 + (c - goal[1]) ** 2
                goals[(r, c)] = math.exp(-d2 / (2.0 * sigma**2))
    return GridSpec(len(rows[0]), len(rows), start, goals, frozenset(walls), slip=slip,
                    layout_id=f"heatmap-s{sigma:g}")


HEATMAP_PARAMS = ((1.0, 0.10), (1.5, 0.05))


def parse_layout(text: str) -> GridSpec:
    """Read a grid from text.

    Header lines ``key: value`` come first (``slip``, ``reward``,
    ``reward.X`` for goal label ``X``, ``id``). Grid rows follow, one token
    per cell: ``#`` wall, ``.`` free, ``S`` start, any other capital letter
    a goal. Blank lines and lines starting with ``;`` are ignored.
    """
    header, grid = {}, []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if ":" in line and not grid:
            key, value = (p.strip() for p in line.split(":", 1))
            header[key] = value
            continue
        grid.append(line.split() if " " in line else list(line))
    if not grid:
        raise ValueError("layout has no grid rows")
    width = len(grid[0])
    if any(len(r) != width for r in grid):
        raise ValueError("ragged grid rows")
    default_reward = float(header.get("reward", 1.0))
    walls, goals, start = set(), {}, None
    for r, row in enumerate(grid):
        for c, ch in enumerate(row):
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                if start is not None:
                    raise ValueError("layout has more than one start cell")
                start = (r, c)
            elif ch == ".":
                continue
            elif ch.isalpha() and ch.isupper():
                goals[(r, c)] = float(header.get(f"reward.{ch}", default_reward))
            else:
                raise ValueError(f"unknown layout token {ch!r} at row {r}, col {c}")
    if start is None:
        raise ValueError("layout has no start cell")
    return GridSpec(
        width, len(grid), start, goals, frozenset(walls),
        slip=float(header.get("slip", 0.0)), layout_id=header.get("id", "custom"),
    )


# -- task distributions ----------------------------------------------------

@dataclass(frozen=True)
class TaskDistribution:
    """A family of grid tasks and how to draw from it.

    ``support_size`` turns the tight/corridor families into a finite set
    pre-drawn from ``seed``. ``sequential`` cycles through a finite support
    in order instead of drawing uniformly.
    """

    family: str = "tight"
    gamma: float = 0.9
    support_size: int | None = None
    seed: int = 0
    sequential: bool = False
    reward_range: tuple = (0.8, 1.0)
    slip_range: tuple = (0.0, 0.1)
    size: int | None = None
    _support: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.support_size is not None and self.support_size < 1:
            raise ValueError("support_size must be positive")
        lo, hi = self.reward_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("reward_range must lie within [0, 1]")
        lo, hi = self.slip_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("slip_range must lie within [0, 1]")
        object.__setattr__(self, "_support", self._build_support())

    def _draw_spec(self, rng) -> GridSpec:
        if self.family == "tight":
            rewards = rng.uniform(*self.reward_range, size=3)
            slip = rng.uniform(*self.slip_range)
            return tight_spec(tuple(rewards), slip, self.size or 11)
        if self.family == "corridor":
            return corridor_spec(float(rng.uniform(*self.reward_range)), self.size or 11)
        raise ValueError(f"family {self.family!r} has a fixed support")

    def _build_support(self):
        if self.family == "maze":
            return tuple(maze_specs())
        if self.family == "heatmap":
            return tuple(heatmap_spec(sigma, slip) for sigma, slip in HEATMAP_PARAMS)
        if self.support_size is None:
            return None
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA11]))
        return tuple(self._draw_spec(rng) for _ in range(self.support_size))

    @property
    def support(self):
        return self._support

    @property
    def cells(self):
        if self.family == "maze":
            return maze_cells()
        return None

    @property
    def p_min(self) -> float | None:
        """Smallest probability of drawing any single task, if finite."""
        return None if self._support is None else 1.0 / len(self._support)

    def with_seed(self, seed: int) -> "TaskDistribution":
        return replace(self, seed=seed)


def sample_task(dist: TaskDistribution, rng, index: int | None = None):
    """Draw a task; returns ``(TabularMdp, task_id)``.

    ``task_id`` is the support index for finite families and ``-1`` for
    freshly drawn tasks. ``index`` (the position in the task sequence) is
    needed when the distribution is sequential.
    """
    support = dist.support
    if support is None:
        spec = dist._draw_spec(rng)
        return build_mdp(spec, dist.gamma, dist.cells), -1
    if dist.sequential:
        if index is None:
            raise ValueError("sequential distributions need the task index")
        k = index % len(support)
    else:
        k = int(rng.integers(len(support)))
    return build_mdp(support[k], dist.gamma, dist.cells), k
