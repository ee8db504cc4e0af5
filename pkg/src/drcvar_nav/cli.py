"""Command line: ``drcvar-nav run | sweep | validate``.

Exit codes: 0 success, 2 collision detected, 3 configuration error,
4 solver breakdown.  Output files other than ``manifest.json`` and the
timing tables are byte-identical for identical inputs, whatever the number of
worker processes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_scenario, load_sweep
from .oracles import conic_suite, cvar_suite, duality_suite
from .simulator import BatchMetrics, ConfigError, _run_job

EXIT_OK = 0
EXIT_COLLISION = 2
EXIT_CONFIG = 3
EXIT_BREAKDOWN = 4
OUT_ENV = "DRCVAR_NAV_OUT"
DEFAULT_OUT = "drcvar_runs"

logger = logging.getLogger("drcvar_nav")


def _simulate(configs, jobs: int):
    """Run every repetition of every config; returns one BatchMetrics per config.

    Noise-free configs are deterministic, so their first repetition stands in
    for all of them.
    """
    work = []
    for c, cfg in enumerate(configs):
        reps = 1 if cfg.noise_std == 0 else cfg.repetitions
        work += [(c, cfg, r) for r in range(reps)]
    args = [(cfg, r) for _, cfg, r in work]
    if jobs > 1 and len(args) > 1:
        from multiprocessing import get_context

        with get_context("spawn").Pool(min(jobs, len(args))) as pool:
            runs = pool.map(_run_job, args, chunksize=1)
    else:
        runs = [_run_job(a) for a in args]
    per = [[] for _ in configs]
    for (c, _, _), run in zip(work, runs):
        per[c].append(run)
    out = []
    for cfg, rs in zip(configs, per):
        if cfg.noise_std == 0:
            rs = rs * cfg.repetitions
        out.append(BatchMetrics(cfg, rs))
    return out


def _num(x) -> str:
    return repr(float(x))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trajectory_lines(batch: BatchMetrics) -> str:
    """One JSON record per (repetition, round, agent)."""
    dt = batch.config.dt
    lines = []
    for rep, run in enumerate(batch.runs):
        for r in run.records:
            rec = {
                "rep": rep,
                "k": r.k,
                "t": round(r.k * dt, 9),
                "agent": r.agent,
                "position": [float(v) for v in r.position],
                "velocity": [float(v) for v in r.velocity],
                "command": [float(v) for v in r.command],
                "status": r.status,
            }
            lines.append(json.dumps(rec, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def metrics_table(batch: BatchMetrics) -> str:
    rows = []
    for rep, run in enumerate(batch.runs):
        goal = np.array([a.goal for a in batch.config.agents])
        err = float(np.linalg.norm(run.final_states[:, :3] - goal, axis=1).max())
        rows.append([rep, _num(run.min_distance), int(run.collision), run.failures, int(run.breakdown), _num(err)])
    return _csv(rows, ["rep", "min_distance", "collision", "failures", "breakdown", "final_goal_error"])


def timing_table(batch: BatchMetrics) -> str:
    rows = []
    for rep, run in enumerate(batch.runs):
        for r in run.records:
            rows.append([rep, r.k, r.agent, f"{r.solve_ms:.3f}", r.outer_iterations, r.inner_iterations])
    return _csv(rows, ["rep", "k", "agent", "solve_ms", "outer_iterations", "inner_iterations"])


def _summary_row(s: dict) -> list:
    return [s["runs"], _num(s["mean_min_distance"]), _num(s["std_min_distance"]), _num(s["collision_pct"]),
            s["failures"]]


SUMMARY_HEADER = ["runs", "mean_min_distance", "std_min_distance", "collision_pct", "failures"]
TIMING_HEADER = ["mean_solve_ms", "std_solve_ms", "median_solve_ms"]


def _timing_row(s: dict) -> list:
    return [f"{s['mean_solve_ms']:.3f}", f"{s['std_solve_ms']:.3f}", f"{s['median_solve_ms']:.3f}"]


def plot_run(batch: BatchMetrics, path: Path, rep: int = 0):
    """Top-down (x, y) trajectories of one repetition as an SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run = batch.runs[rep]
    fig, ax = plt.subplots(figsize=(6, 4))
    for spec in batch.config.agents:
        pts = np.array([r.position for r in run.records if r.agent == spec.name])
        pts = np.vstack([pts, run.final_states[run.names.index(spec.name), :3]])
        (line,) = ax.plot(pts[:, 0], pts[:, 1], label=spec.name)
        hx, hy = spec.half_extents[:2]
        for p in pts[:: max(1, len(pts) // 6)]:
            ax.add_patch(plt.Rectangle((p[0] - hx, p[1] - hy), 2 * hx, 2 * hy, fill=False,
                                       color=line.get_color(), alpha=0.3, lw=0.8))
        ax.plot(*spec.goal[:2], marker="x", color=line.get_color())
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best")
    ax.set_title(f"{batch.config.name}, repetition {rep}")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _out_dir(arg, name) -> Path:
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT)) / name


def _write(path: Path, text: str):
    path.write_text(text)


def _manifest(path: Path, command, extra: dict, started: float, code: int):
    info = {
        "command": command,
        "version": __version__,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_seconds": round(time.time() - started, 3),
        "exit_code": code,
        **extra,
    }
    path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def _exit_code(batches) -> int:
    if any(r.collision for b in batches for r in b.runs):
        return EXIT_COLLISION
    if any(r.breakdown for b in batches for r in b.runs):
        return EXIT_BREAKDOWN
    return EXIT_OK


def cmd_run(args) -> int:
    started = time.time()
    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = _out_dir(args.out, cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    (batch,) = _simulate([cfg], args.jobs)
    _write(out / "trajectory.jsonl", trajectory_lines(batch))
    _write(out / "metrics.csv", metrics_table(batch))
    s = batch.summary()
    _write(out / "summary.csv", _csv([_summary_row(s)], SUMMARY_HEADER))
    _write(out / "timing.csv", timing_table(batch))
    if args.plot:
        plot_run(batch, out / "trajectory.svg")
    code = _exit_code([batch])
    _manifest(out / "manifest.json", "run", {"scenario": str(args.scenario), "seed": cfg.seed, "jobs": args.jobs,
                                             **{k: s[k] for k in TIMING_HEADER}}, started, code)
    print(f"{cfg.name}: {s['runs']} runs, mean min distance {s['mean_min_distance']:.3f} m, "
          f"collisions {s['collision_pct']:.0f}%, median solve {s['median_solve_ms']:.1f} ms -> {out}")
    return code


def cmd_sweep(args) -> int:
    started = time.time()
    spec = load_sweep(args.sweep)
    if args.seed is not None:
        spec = replace(spec, base=replace(spec.base, seed=args.seed))
    out = _out_dir(args.out, spec.name)
    out.mkdir(parents=True, exist_ok=True)
    cells = spec.cells()
    batches = _simulate([cfg for _, cfg in cells], args.jobs)
    axes = list(spec.axes)
    rows, trows = [], []
    for c, ((settings, _), batch) in enumerate(zip(cells, batches)):
        s = batch.summary()
        vals = [settings[a] for a in axes]
        rows.append([c] + vals + _summary_row(s))
        trows.append([c] + vals + _timing_row(s))
        print(f"cell {c}: " + ", ".join(f"{a}={v}" for a, v in settings.items())
              + f" -> min distance {s['mean_min_distance']:.3f} +- {s['std_min_distance']:.3f} m, "
              f"collisions {s['collision_pct']:.0f}%, solve {s['mean_solve_ms']:.1f} +- {s['std_solve_ms']:.1f} ms")
    _write(out / "sweep.csv", _csv(rows, ["cell"] + axes + SUMMARY_HEADER))
    _write(out / "sweep_timing.csv", _csv(trows, ["cell"] + axes + TIMING_HEADER))
    code = _exit_code(batches)
    _manifest(out / "manifest.json", "sweep", {"sweep": str(args.sweep), "cells": len(cells), "jobs": args.jobs},
              started, code)
    return code


def cmd_validate(args) -> int:
    suites = [
        duality_suite(tol=args.duality_tol),
        cvar_suite(),
        conic_suite(),
    ]
    for s in suites:
        print(("PASS " if s.ok else "FAIL ") + s.line())
    return EXIT_OK if all(s.ok for s in suites) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drcvar-nav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver fallbacks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<name> or {DEFAULT_OUT}/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("run", help="simulate one scenario file")
    p.add_argument("scenario")
    common(p)
    p.add_argument("--plot", action="store_true", help="write trajectory.svg for repetition 0")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="simulate every cell of a sweep file")
    p.add_argument("sweep")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run the oracle suites")
    p.add_argument("--duality-tol", type=float, default=1e-6, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
