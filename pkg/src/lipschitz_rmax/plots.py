"""SVG figures built from the CSV files of a run directory."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lifelong import DIAGNOSTICS_HEADER, PRIOR_USE_HEADER, RETURNS_HEADER, mean_ci, moving_average  # noqa: E402

FIGURES = ("per-task", "per-episode", "rho-vs-prior", "prior-use")

plt.rcParams["svg.hashsalt"] = "lipschitz-rmax"


class MissingColumns(ValueError):
    pass


def _read(path: Path, header):
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in header if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumns(f"{path.name} lacks columns {missing}")
        return list(reader)


def load_relative_returns(run_dir) -> dict:
    """``{agent: array (repeats, tasks, episodes)}`` of relative returns."""
    rows = _read(Path(run_dir) / "returns.csv", RETURNS_HEADER)
    cells = defaultdict(dict)
    shape = [0, 0, 0]
    for row in rows:
        key = (int(row["repeat"]), int(row["task_idx"]), int(row["episode"]))
        cells[row["agent"]][key] = float(row["relative_return"])
        shape = [max(shape[i], key[i] + 1) for i in range(3)]
    out = {}
    for agent, values in cells.items():
        arr = np.full(shape, np.nan)
        for (r, t, e), v in values.items():
            arr[r, t, e] = v
        out[agent] = arr
    return out


def _finish(fig, ax, path, xlabel, ylabel):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _band(ax, x, mean, half, label):
    line = ax.plot(x, mean, label=label)[0]
    ax.fill_between(x, mean - half, mean + half, color=line.get_color(), alpha=0.2, linewidth=0)


def per_task(run_dir, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for agent, rel in load_relative_returns(run_dir).items():
        mean, half = mean_ci(np.nanmean(rel, axis=2))
        _band(ax, np.arange(1, len(mean) + 1), mean, half, agent)
    return _finish(fig, ax, path, "task", "relative discounted return")


def per_episode(run_dir, path, window: int = 100):
    fig, ax = plt.subplots(figsize=(6, 4))
    for agent, rel in load_relative_returns(run_dir).items():
        mean, half = mean_ci(moving_average(np.nanmean(rel, axis=1), window))
        _band(ax, np.arange(1, len(mean) + 1), mean, half, agent)
    return _finish(fig, ax, path, "episode", f"relative discounted return ({window}-episode average)")


def rho_vs_prior(run_dir, path):
    rows = [r for r in _read(Path(run_dir) / "diagnostics.csv", DIAGNOSTICS_HEADER) if r["d_prior"] != ""]
    rows.sort(key=lambda r: float(r["d_prior"]))
    x = np.array([float(r["d_prior"]) for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("rho_lip", "rho_Lip"), ("rho_speedup", "rho_Speed-up"), ("rho_return", "rho_Return")):
        ax.plot(x, [float(r[key]) for r in rows], marker="o", label=label)
    return _finish(fig, ax, path, "prior bound on the model distance", "ratio")


def prior_use(run_dir, path):
    rows = _read(Path(run_dir) / "prior_use.csv", PRIOR_USE_HEADER)
    curves = defaultdict(list)
    for r in rows:
        curves[(r["agent"], int(r["task_idx"]))].append((int(r["update"]), float(r["mean"]), float(r["ci"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (agent, task), pts in sorted(curves.items()):
        pts.sort()
        k, m, h = (np.array(v) for v in zip(*pts))
        _band(ax, k + 1, 100 * m, 100 * h, f"{agent}, task {task + 1}")
    return _finish(fig, ax, path, "model update", "% of pairs using the prior")


def make_figure(run_dir, figure: str, out_path=None):
    if figure not in FIGURES:
        raise ValueError(f"figure must be one of {FIGURES}")
    out_path = Path(out_path) if out_path else Path(run_dir) / f"{figure}.svg"
    fn = {"per-task": per_task, "per-episode": per_episode, "rho-vs-prior": rho_vs_prior, "prior-use": prior_use}[figure]
    return fn(run_dir, out_path)
