"""Command-line entry point: ``srulab <subcommand> ...``.

Every run writes its primary outputs plus ``config.json`` (the resolved
configuration) into one output directory. All randomness is drawn from named
substreams of the single ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

OUT_ROOT_ENV = "SRULAB_OUT_ROOT"
CELLS = ("lstm", "gru", "sru-lstm", "sru-gru", "sru-ours")
log = logging.getLogger("srulab")


class CLIError(Exception):
    """A user-facing failure reported as a JSON error record with exit code 1."""


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for purpose ``name``; adding new names never perturbs existing streams."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


# -- plumbing -----------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CLIError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise CLIError(f"{p}: top level must be a JSON object")
    return cfg


def _under_root(path: Path) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    return Path(root) / path if root and not path.is_absolute() else path


def _out_dir(args) -> Path:
    out = _under_root(Path(args.out or f"runs/{args.command}-seed{args.seed}"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    """Shortest round-tripping text for a float."""
    return repr(float(v))


def _write_resolved(out: Path, command: str, seed: int, params: dict) -> None:
    _dump_json(out / "config.json", {"subcommand": command, "seed": seed, "params": params})


# -- subcommands ----------------------------------------------------------------


def cmd_bench_spatial(args) -> dict:
    from .benchmark.train import BenchmarkConfig, train_benchmark

    raw = _load_config(args.config)
    if args.epochs is not None:
        raw["epochs"] = args.epochs
    config = BenchmarkConfig.from_dict(raw)
    out = _out_dir(args)
    _write_resolved(out, args.command, args.seed, {"cell": args.cell, **config.__dict__})
    report, _ = train_benchmark(args.cell, config, substream(args.seed, "bench-train"),
                                eval_rng=substream(args.seed, "bench-eval"), seed=args.seed)
    _dump_json(out / "report.json", report.to_dict())
    _write_csv(out / "curve.csv", ["epoch", "spatial_mse", "temporal_bce", "temporal_acc"],
               [(e, _num(m), _num(b), _num(a)) for e, m, b, a in
                zip(report.epochs, report.spatial_mse, report.temporal_bce, report.temporal_acc)])
    per_step = report.final.get("per_step_error", [])
    T = len(per_step)
    _write_csv(out / "per_step_error.csv", ["step_index", "mean_error"],
               [(T - i, _num(e)) for i, e in enumerate(per_step)])
    return {"out": str(out), "final": report.final}


def _depth_files(folder: Path) -> list[Path]:
    if not folder.is_dir():
        raise CLIError(f"input directory not found: {folder}")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".pfm", ".pgm"))
    if not files:
        raise CLIError(f"no .pfm or .pgm images in {folder}")
    return files


def cmd_noise_apply(args) -> dict:
    from .depth.imageio import read_depth, write_depth
    from .depth.noise import NoiseConfig, apply_noise, invalid_fraction

    raw = _load_config(args.config)
    raw["seed"] = args.seed
    config = NoiseConfig.from_dict(raw)
    files = _depth_files(Path(args.inp))
    out = _out_dir(args)
    _write_resolved(out, args.command, args.seed, config.to_dict())
    summary = {}
    for f in files:
        # one stream per file name, so adding images never changes the others
        noisy = apply_noise(read_depth(f), config, [substream(args.seed, f"noise-rho/{f.name}")])
        write_depth(out / f.name, noisy)
        summary[f.name] = {"invalid_fraction": invalid_fraction(noisy)}
    _dump_json(out / "summary.json", summary)
    return {"out": str(out), "images": len(files)}


def cmd_nav_train(args) -> dict:
    from .nav.maze import generate_suite
    from .nav.ppo import NavTrainConfig, policy_checkpoint, train_nav

    raw = _load_config(args.config)
    if args.iterations is not None:
        raw.setdefault("ppo", {})["iterations"] = args.iterations
    config = NavTrainConfig.from_dict(raw)
    out = _out_dir(args)
    _write_resolved(out, args.command, args.seed, config.to_dict())
    mazes = generate_suite(substream(args.seed, "episode-gen"), config.n_train_mazes, config.maze_kinds,
                           config.maze_size)
    policies, history = train_nav(config, mazes, lambda name: substream(args.seed, f"nav/{name}"))
    for tag, p in zip("ab", policies):
        _dump_json(out / f"policy_{tag}.json", policy_checkpoint(p, config))
    cols = [k for k in history[0] if k != "elapsed_s"] if history else ["iteration"]
    _write_csv(out / "history.csv", cols, [[r[c] if isinstance(r[c], int) else _num(r[c]) for c in cols] for r in history])
    return {"out": str(out), "iterations": len(history)}


def cmd_nav_eval(args) -> dict:
    from .analysis import success_by_distance
    from .nav.maze import load_maze_dir
    from .nav.ppo import evaluate_nav, load_policy, record_attention

    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise CLIError(f"checkpoint not found: {ckpt}")
    policy, config = load_policy(json.loads(ckpt.read_text()))
    if not Path(args.mazes).is_dir():
        raise CLIError(f"maze directory not found: {args.mazes}")
    mazes = load_maze_dir(args.mazes)
    if not mazes:
        raise CLIError(f"no maze files (*.txt) in {args.mazes}")
    edges = [float(e) for e in args.edges.split(",")]
    out = _out_dir(args)
    _write_resolved(out, args.command, args.seed, {"ckpt": str(ckpt), "mazes": [m.name for m in mazes],
                                                    "episodes": args.episodes, "edges": edges,
                                                    "stochastic": args.stochastic})
    res = evaluate_nav(policy, mazes, args.episodes, config.env, substream(args.seed, "nav-eval"),
                       deterministic=not args.stochastic)
    buckets = success_by_distance([e.start_goal_distance for e in res.episodes],
                                  [e.success for e in res.episodes], edges)
    metrics = {"success_rate": res.success_rate, "mean_episode_length": res.mean_episode_length,
               "episodes": len(res.episodes), "success_by_distance": buckets.to_dict()}
    _dump_json(out / "metrics.json", metrics)
    if args.attention:
        w = record_attention(policy, mazes[0], config.env, substream(args.seed, "nav-attention"))
        K = w.shape[-1]
        _write_csv(out / "attention.csv", ["step", "head"] + [f"w{k}" for k in range(K)],
                   [[t, h, *map(_num, w[t, h])] for t in range(w.shape[0]) for h in range(w.shape[1])])
    return {"out": str(out), "success_rate": res.success_rate}


def cmd_analyze(args) -> dict:
    from .analysis import ClassConditional, FeatureSet, box_stats, pca_fit_project, read_feature_csv, \
        success_by_distance

    for p in [args.inp] + ([args.ref] if getattr(args, "ref", None) else []):
        if not Path(p).is_file():
            raise CLIError(f"input CSV not found: {p}")
    header, X = read_feature_csv(args.inp)
    if args.kind == "pca":
        r = pca_fit_project(X, args.k)
        result = {"columns": header, "mean": r.mean.tolist(), "components": r.components.tolist(),
                  "explained_variance": r.explained_variance.tolist(),
                  "explained_ratio": r.explained_ratio.tolist(), "projections": r.projections.tolist()}
    elif args.kind == "md":
        label = None
        if args.label_col:
            if args.label_col not in header:
                raise CLIError(f"label column {args.label_col!r} not in {header}")
            j = header.index(args.label_col)
            label, X = X[:, j], np.delete(X, j, axis=1)
        if args.ref:
            ref_header, R = read_feature_csv(args.ref)
            ref_label = None
            if args.label_col:
                j = ref_header.index(args.label_col)
                ref_label, R = R[:, j], np.delete(R, j, axis=1)
        else:
            R, ref_label = X, label
        model = ClassConditional.fit(R, ref_label) if args.label_col else FeatureSet.fit(R)
        d = np.atleast_1d(model.mahalanobis(X))
        result = {"distances": d.tolist(), "box": box_stats(d),
                  "variant": "class-conditional" if args.label_col else "pooled"}
    else:
        for col in ("distance", "success"):
            if col not in header:
                raise CLIError(f"sr-by-dist needs columns 'distance' and 'success', got {header}")
        edges = [float(e) for e in args.edges.split(",")]
        result = success_by_distance(X[:, header.index("distance")], X[:, header.index("success")] > 0.5,
                                     edges).to_dict()
    out = _under_root(Path(args.out))
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, result)
    return {"out": str(out)}


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srulab", description="Recurrent-memory benchmark and navigation toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, out_help="output directory"):
        p.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
        p.add_argument("--out", help=f"{out_help}; relative paths go under ${OUT_ROOT_ENV} when set")
        p.add_argument("--config", help="JSON config file")

    p = sub.add_parser("bench-spatial", help="train one cell on the spatial-temporal memorization task")
    common(p)
    p.add_argument("--cell", choices=CELLS, required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_bench_spatial)

    p = sub.add_parser("noise-apply", help="apply the stereo depth-noise model to a folder of PFM/PGM images")
    common(p)
    p.add_argument("--in", dest="inp", required=True, help="input directory")
    p.set_defaults(func=cmd_noise_apply)

    p = sub.add_parser("nav-train", help="train a navigation policy with recurrent PPO")
    common(p)
    p.add_argument("--iterations", type=int, help="override ppo.iterations")
    p.set_defaults(func=cmd_nav_train)

    p = sub.add_parser("nav-eval", help="evaluate a navigation checkpoint on a maze directory")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mazes", required=True, help="directory of ASCII maze files (*.txt)")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--edges", default="0,5,10,15,20", help="distance bucket edges in meters")
    p.add_argument("--stochastic", action="store_true", help="sample actions instead of using the mean")
    p.add_argument("--attention", action="store_true", help="dump per-step attention weights to attention.csv")
    p.set_defaults(func=cmd_nav_eval)

    p = sub.add_parser("analyze", help="PCA, Mahalanobis distance or success-by-distance on a CSV")
    p.add_argument("kind", choices=("pca", "md", "sr-by-dist"))
    p.add_argument("--in", dest="inp", required=True, help="feature CSV (header row + float rows)")
    p.add_argument("--out", required=True, help="output JSON file")
    p.add_argument("--k", type=int, default=2, help="PCA components")
    p.add_argument("--ref", help="md: reference CSV to fit the distribution on (default: the input)")
    p.add_argument("--label-col", help="md: class column for the class-conditional variant")
    p.add_argument("--edges", default="0,5,10,15,20", help="sr-by-dist bucket edges")
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        result = args.func(args)
    except (CLIError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
