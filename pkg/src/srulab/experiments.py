"""Long-running acceptance experiments: ``python -m srulab.experiments {bench,nav}``.

Both experiments drive the ``srulab`` CLI so their artifacts are exactly what a
user would get by hand. Jobs whose outputs already exist are skipped, so an
interrupted run can be resumed. Wall-clock timings are kept in ``timings.json``
next to the runs because they are the only non-deterministic output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cli import main as cli_main
from .cli import substream

BENCH_CONFIG = {
    "T": 15,
    "hidden_dim": 128,
    "epochs": 1000,
    "batches_per_epoch": 10,
    "batch_size": 128,
    "bce_weight": 10.0,
    "eval_episodes": 1000,
}
BENCH_ALL_CELLS = ("lstm", "gru", "sru-lstm", "sru-gru", "sru-ours")
BENCH_SEPARATION_CELLS = ("lstm", "sru-ours")
SEEDS = (0, 1, 2)

NAV_CONFIG = {
    "maze_kinds": ["open", "dead-end"],
    "maze_size": 15,
    "dml": False,
    "env": {"reward": {"delta_check": 0.1, "check_mode": "expected", "eta1": 0.2}},
    "ppo": {"iterations": 200},
}
NAV_CELLS = ("sru-ours", "mlp")
NAV_EVAL_MAZES = 20
NAV_EVAL_EPISODES = 200
NAV_BUDGET_S = 2 * 3600.0


def _record_time(folder: Path, key: str, seconds: float) -> None:
    path = folder / "timings.json"
    times = json.loads(path.read_text()) if path.is_file() else {}
    times[key] = seconds
    path.write_text(json.dumps(times, indent=2, sort_keys=True) + "\n")


def _run_cli(argv: list[str]) -> float:
    t0 = time.perf_counter()
    code = cli_main(argv)
    if code != 0:
        raise RuntimeError(f"srulab {' '.join(argv)} exited with {code}")
    return time.perf_counter() - t0


def bench_jobs() -> list[tuple[str, int]]:
    jobs = [(c, 0) for c in BENCH_ALL_CELLS]
    jobs += [(c, s) for s in SEEDS[1:] for c in BENCH_SEPARATION_CELLS]
    return jobs


def run_bench(root: Path) -> None:
    folder = root / "bench"
    folder.mkdir(parents=True, exist_ok=True)
    cfg = folder / "config.json"
    cfg.write_text(json.dumps(BENCH_CONFIG, indent=2) + "\n")
    for cell, seed in bench_jobs():
        run = folder / f"{cell}-seed{seed}"
        if (run / "report.json").is_file():
            continue
        secs = _run_cli(["bench-spatial", "--cell", cell, "--seed", str(seed), "--config", str(cfg),
                         "--out", str(run)])
        _record_time(folder, run.name, secs)
        print(f"{run.name}: {secs:.0f}s", flush=True)


def write_eval_mazes(folder: Path, n: int = NAV_EVAL_MAZES, size: int = 15, seed: int = 1000) -> None:
    from .nav.maze import dead_end_maze, save_maze

    folder.mkdir(parents=True, exist_ok=True)
    rng = substream(seed, "eval-mazes")
    for k in range(n):
        save_maze(dead_end_maze(rng, size, name=f"eval{k:02d}"), folder / f"eval{k:02d}.txt")


def run_nav(root: Path) -> None:
    folder = root / "nav"
    folder.mkdir(parents=True, exist_ok=True)
    mazes = folder / "eval-mazes"
    if not mazes.is_dir():
        write_eval_mazes(mazes)
    for cell in NAV_CELLS:
        cfg = folder / f"config-{cell}.json"
        cfg.write_text(json.dumps({**NAV_CONFIG, "policy": {"cell": cell}}, indent=2) + "\n")
    for seed in SEEDS:
        for cell in NAV_CELLS:
            run = folder / f"{cell}-seed{seed}"
            if not (run / "policy_a.json").is_file():
                secs = _run_cli(["nav-train", "--config", str(folder / f"config-{cell}.json"),
                                 "--seed", str(seed), "--out", str(run / "train")])
                _record_time(folder, f"{run.name}/train", secs)
                (run / "train" / "policy_a.json").replace(run / "policy_a.json")
                print(f"{run.name} train: {secs:.0f}s", flush=True)
            if not (run / "eval" / "metrics.json").is_file():
                _run_cli(["nav-eval", "--ckpt", str(run / "policy_a.json"), "--mazes", str(mazes),
                          "--episodes", str(NAV_EVAL_EPISODES), "--seed", str(seed), "--out", str(run / "eval")])


def _load(path: Path):
    return json.loads(path.read_text()) if path.is_file() else None


def bench_summary(root: Path) -> dict:
    """Per-run final metrics and runtimes; missing runs map to None."""
    folder = root / "bench"
    times = _load(folder / "timings.json") or {}
    runs = {}
    for cell, seed in bench_jobs():
        name = f"{cell}-seed{seed}"
        report = _load(folder / name / "report.json")
        runs[name] = None if report is None else {**report["final"], "seconds": times.get(name)}
    return runs


def nav_summary(root: Path) -> dict:
    folder = root / "nav"
    times = _load(folder / "timings.json") or {}
    rates = {c: [] for c in NAV_CELLS}
    for seed in SEEDS:
        for cell in NAV_CELLS:
            m = _load(folder / f"{cell}-seed{seed}" / "eval" / "metrics.json")
            rates[cell].append(None if m is None else m["success_rate"])
    complete = all(r is not None for v in rates.values() for r in v)
    train_s = sum(v for k, v in times.items() if k.endswith("/train"))
    out = {"rates": rates, "complete": complete, "train_seconds": train_s}
    if complete:
        out["mean"] = {c: float(np.mean(v)) for c, v in rates.items()}
        out["margin"] = out["mean"]["sru-ours"] - out["mean"]["mlp"]
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m srulab.experiments")
    ap.add_argument("experiment", choices=("bench", "nav"))
    ap.add_argument("--out", default="acceptance", help="artifact root (default ./acceptance)")
    args = ap.parse_args(argv)
    root = Path(args.out)
    if args.experiment == "bench":
        run_bench(root)
        print(json.dumps(bench_summary(root), indent=2))
    else:
        run_nav(root)
        print(json.dumps(nav_summary(root), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
