"""Command line: ``lrmax run | plot | inspect | validate-config``."""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ConfigError, config_to_dict, derived_quantities, load_config
from .lifelong import run_lifelong, write_libraries, write_record
from .mdp import load_library
from .metrics import CASE_NAMES, DistanceConfig, dhat_dissimilarity, dhat_model_table, lipschitz_q_bound

OUT_ROOT_ENV = "LRMAX_OUT_ROOT"

log = logging.getLogger("lipschitz_rmax")


def _default_out(config_path: str) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / Path(config_path).stem


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else _default_out(args.config)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"{out} is not empty; pass --force to overwrite", file=sys.stderr)
            return 1
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        record = run_lifelong(cfg, jobs=args.jobs, library_repeats=(0,))
        paths = write_record(record, out)
        write_libraries(record, out, repeat=0)
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    meta = {
        "version": __version__,
        "config": config_to_dict(cfg),
        "derived": derived_quantities(cfg),
        "failed_repeats": sorted(record.failures),
        "files": sorted(p.name for p in paths.values()),
    }
    with open(out / "metadata.yaml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    print(f"wrote {out}")
    if record.failures:
        print(f"{len(record.failures)} repeat(s) failed; see the log", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config, args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    yaml.safe_dump({"config": config_to_dict(cfg), "derived": derived_quantities(cfg)}, sys.stdout, sort_keys=False)
    return 0


def cmd_plot(args) -> int:
    from .plots import FIGURES, make_figure

    figures = FIGURES if args.figure == "all" else (args.figure,)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    status = 0
    for fig in figures:
        try:
            path = make_figure(args.run_dir, fig, Path(args.out) / f"{fig}.svg" if args.out else None)
            print(f"wrote {path}")
        except (OSError, ValueError) as exc:
            print(f"{fig}: {exc}", file=sys.stderr)
            status = 1
    return status


def inspect_report(library, src_idx: int, dst_idx: int, cfg: DistanceConfig) -> str:
    n = len(library)
    for name, i in (("src", src_idx), ("dst", dst_idx)):
        if not 0 <= i < n:
            raise IndexError(f"{name} index {i} out of range for a library of {n} tasks")
    src, dst = library[src_idx], library[dst_idx]
    values, cases = dhat_model_table(src, dst, cfg)
    d_fwd = dhat_dissimilarity(src, dst, cfg)
    d_bwd = dhat_dissimilarity(dst, src, cfg)
    bound = np.minimum(lipschitz_q_bound(src, d_fwd, d_bwd), 1.0 / (1.0 - src.discount))
    lines = [
        f"src={src_idx} dst={dst_idx} epsilon={cfg.epsilon:g} d_prior={cfg.d_prior}",
        f"{'s':>4} {'a':>3} {'case':>7} {'dhat_model':>11} {'d(src||dst)':>12} {'d(dst||src)':>12}",
    ]
    S, A = src.shape
    for s in range(S):
        for a in range(A):
            lines.append(
                f"{s:>4} {a:>3} {CASE_NAMES[int(cases[s, a])]:>7} {values[s, a]:>11.4f} "
                f"{d_fwd[s, a]:>12.4f} {d_bwd[s, a]:>12.4f}"
            )
    counts = {CASE_NAMES[k]: int(np.count_nonzero(cases == k)) for k in sorted(CASE_NAMES)}
    lines.append("cases: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    lines.append(
        f"bound on Q of dst transferred from src: min={bound.min():.4f} mean={bound.mean():.4f} max={bound.max():.4f}"
    )
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    try:
        library = load_library(args.library)
    except (OSError, ValueError) as exc:
        print(f"cannot load library: {exc}", file=sys.stderr)
        return 1
    cfg = DistanceConfig(epsilon=args.epsilon, delta=args.delta, d_prior=args.d_prior)
    try:
        print(inspect_report(library, args.src, args.dst, cfg))
    except IndexError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrmax", description="Lifelong RMax experiments with Lipschitz value transfer.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<config stem>, root 'runs')")
    run.add_argument("--jobs", type=int, default=1, help="parallel repeats")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate-config", help="check a config file and print it fully resolved")
    val.add_argument("--config", required=True)
    val.add_argument("--seed", type=int)
    val.set_defaults(func=cmd_validate)

    plot = sub.add_parser("plot", help="draw SVG figures from a run directory")
    plot.add_argument("run_dir")
    plot.add_argument("--figure", default="all", choices=("all", "per-task", "per-episode", "rho-vs-prior", "prior-use"))
    plot.add_argument("--out", help="directory for the SVG files (default: the run directory)")
    plot.set_defaults(func=cmd_plot)

    ins = sub.add_parser("inspect", help="distance report between two saved tasks")
    ins.add_argument("library", help="directory of saved task JSON files")
    ins.add_argument("src", type=int)
    ins.add_argument("dst", type=int)
    ins.add_argument("--epsilon", type=float, default=0.01)
    ins.add_argument("--delta", type=float, default=0.05)
    ins.add_argument("--d-prior", type=float, default=None)
    ins.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
