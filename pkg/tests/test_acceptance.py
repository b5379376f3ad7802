"""One check per acceptance criterion, each reporting a single PASS/FAIL line.

The cheap criteria are recomputed here. The training-based ones (1, 2 and 8)
read artifacts written by ``python -m srulab.experiments {bench,nav}``; point
``SRULAB_ACCEPTANCE_DIR`` elsewhere to check a different run.
"""

import json
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from srulab import tensor as tn
from srulab.analysis import FeatureSet, mahalanobis, pca_fit_project, success_by_distance
from srulab.cells import CELL_KINDS, STEP_FUNCTIONS, CellParams, RecurrentCell, unroll
from srulab.cli import main as cli_main
from srulab.depth.noise import NoiseConfig, apply_noise, compute_kernels, filter_disparity, quantize, reference_oracle
from srulab.experiments import NAV_BUDGET_S, bench_summary, nav_summary
from srulab.nav.env import NavEnv, RewardConfig, pen_reward, reg_reward, task_reward
from srulab.nav.maze import generate_suite
from srulab.nav.policy import AttentionCompressor, PolicyNet, attention_compress, dml_loss, gaussian_kl
from srulab.nav.ppo import NavTrainConfig, Runner, _replay_minibatch
from srulab.tensor import Tensor

import acceptance_log
from gradcheck import check
from test_cells import I, H, random_arrays, state_of
from test_depth_noise import random_config, random_scene

ROOT = Path(os.environ.get("SRULAB_ACCEPTANCE_DIR", Path(__file__).resolve().parent.parent / "acceptance"))


def report(n, ok, detail):
    line = acceptance_log.record(n, ok, detail)
    print(line)
    assert ok, line


def _bench_or_skip():
    runs = bench_summary(ROOT)
    missing = [k for k, v in runs.items() if v is None]
    if missing:
        acceptance_log.record_missing((1, 2), f"missing bench runs {missing}")
        pytest.skip(f"run `python -m srulab.experiments bench --out {ROOT}` first (missing {missing})")
    return runs


def test_criterion_1_temporal_memorization():
    runs = _bench_or_skip()
    seed0 = {k.rsplit("-seed", 1)[0]: v for k, v in runs.items() if k.endswith("-seed0")}
    accs = {c: v["temporal_acc"] for c, v in seed0.items()}
    secs = {c: v["seconds"] for c, v in seed0.items()}
    ok = all(a == 1.0 for a in accs.values()) and all(s is not None and s <= 1800 for s in secs.values())
    detail = ", ".join(f"{c} acc={accs[c]:.6g} ({secs[c] or float('nan'):.0f}s)" for c in accs)
    report(1, ok, detail)


def test_criterion_2_spatial_separation():
    runs = _bench_or_skip()
    parts, ok = [], True
    for seed in (0, 1, 2):
        lstm, ours = runs[f"lstm-seed{seed}"], runs[f"sru-ours-seed{seed}"]
        ratio = ours["spatial_mse"] / lstm["spatial_mse"]
        le, oe = np.array(lstm["per_step_error"]), np.array(ours["per_step_error"])
        # per_step_error runs from the final observation (index T) to the first (index 1)
        lstm_recency = le[-1] / le[0]
        ours_spread = oe.max() / oe.min()
        ok &= ratio <= 0.1 and lstm_recency >= 2.0 and ours_spread < 2.0
        parts.append(f"seed{seed}: mse ratio={ratio:.3f}, lstm err1/err15={lstm_recency:.2f}, "
                     f"sru-ours spread={ours_spread:.2f}")
    report(2, ok, "; ".join(parts))


def test_criterion_3_reduction_invariance():
    rng = np.random.default_rng(3)
    worst = 0.0
    for sru, base in (("sru-lstm", "lstm"), ("sru-gru", "gru")):
        for _ in range(100):
            arrays = random_arrays(sru, rng, scale=1.0)
            arrays["W_xs"][:] = 0.0
            arrays["b_s"][:] = 1.0
            base_arrays = {k: v for k, v in arrays.items() if k not in ("W_xs", "b_s")}
            x, h0, c0 = rng.normal(size=I), rng.normal(size=H), rng.normal(size=H)
            h1, s1, _ = STEP_FUNCTIONS[sru](x, state_of(sru, h0, c0), CellParams.from_arrays(sru, arrays))
            h2, s2, _ = STEP_FUNCTIONS[base](x, state_of(base, h0, c0), CellParams.from_arrays(base, base_arrays))
            worst = max(worst, float(np.max(np.abs(h1.data - h2.data))))
            if s1.c is not None:
                worst = max(worst, float(np.max(np.abs(s1.c.data - s2.c.data))))
    report(3, worst < 1e-12, f"max |difference| = {worst:.2e} over 200 inputs")


def test_criterion_4_gradient_correctness():
    worst = {}
    for kind in CELL_KINDS:
        for seed in range(20):
            rng = np.random.default_rng(4000 + seed)
            cell = RecurrentCell(CellParams.from_arrays(kind, random_arrays(kind, rng, scale=0.6), requires_grad=True))
            X = Tensor(rng.normal(size=(4, 2, I)), requires_grad=True)
            w = Tensor(rng.normal(size=(2, H)))

            def loss():
                h, _, _ = unroll(cell, X)
                return (h * w).sum()

            worst[kind] = max(worst.get(kind, 0.0), check(loss, cell.params.parameters() + [X]))
    for seed in range(20):
        rng = np.random.default_rng(4100 + seed)
        p = AttentionCompressor(8, 5, 4, rng)
        tok = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
        q = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        R1, R2 = rng.normal(size=(2, 8)), rng.normal(size=(2, 4, 5))

        def loss():
            out, wts = attention_compress(tok, q, p)
            return tn.tsum(out * Tensor(R1)) + tn.tsum(wts * Tensor(R2))

        worst["attention"] = max(worst.get("attention", 0.0), check(loss, [tok, q, *p.named_parameters().values()]))
    ok = all(v < 1e-4 for v in worst.values())
    report(4, ok, "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_criterion_5_depth_noise_oracle():
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(50_000 + seed)
        cfg = random_config(rng, seed)
        depth = random_scene(rng, 1, 64, 64)
        mismatches += apply_noise(depth, cfg).tobytes() != reference_oracle(depth, cfg).tobytes()
    fixed = NoiseConfig(rho_min=1.0, rho_max=1.0, tau_min=1e300, tau_max=1e300, quant_step=0.125)
    const = filter_disparity(np.full((2, 16, 20), 3.3), compute_kernels(3), fixed, np.random.default_rng(0))
    const_ok = bool(np.all(const == quantize(3.3, 0.125)))
    dead = NoiseConfig(rho_min=0.0, rho_max=0.0, invalid_disp=-7.0)
    inval = filter_disparity(np.random.default_rng(1).uniform(1, 5, (2, 12, 12)), compute_kernels(3), dead,
                             np.random.default_rng(1))
    inval_ok = bool(np.all(inval == -7.0))
    ok = mismatches == 0 and const_ok and inval_ok
    report(5, ok, f"{100 - mismatches}/100 bit-exact, constant fixed point {const_ok}, rho=0 invalidation {inval_ok}")


def test_criterion_6_reward_unit_values():
    rc = RewardConfig(sigma_tight=2.0, sigma_loose=2.0)
    T = 150
    task = [float(task_reward(T, [0.0, 0.0], rc, T, 0.9)),         # at the goal inside the window
            float(task_reward(1, [0.0, 0.0], rc, T, 0.5)),         # outside the window, no check
            float(task_reward(T, [2.0, 0.0], rc, T, 0.9))]         # one sigma away inside the window
    task_ok = task == [1.0, 0.0, 0.5]
    _, a_m = reg_reward([1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], RewardConfig(lam=0.9))
    filt_ok = abs(a_m[0] - 0.1) < 1e-15
    pen = pen_reward([True, False, False, True], [0.0, 0.5, -1.5, 2.0], RewardConfig(eta1=1.0, eta2=0.5, theta_safe=1.0))
    pen_ok = np.array_equal(pen, [1.0, 0.0, 0.25, 1.5])
    report(6, task_ok and filt_ok and pen_ok, f"task={task}, filter={a_m[0]:.3g}, penalties={pen.tolist()}")


def test_criterion_7_tc_dropout_and_dml():
    cfg = NavTrainConfig.from_dict({
        "ppo": {"n_envs": 3, "rollout_len": 64, "segment_len": 32, "minibatches": 1, "epochs": 1},
        "policy": {"hidden_dim": 12, "token_dim": 8, "heads": 2, "head_hidden": 12, "dropout": 0.5},
        "env": {"T_max": 20, "n_rays": 6, "n_scan": 4}})
    pol = PolicyNet(cfg.policy, 6, 4, 10.0, np.random.default_rng(1))
    seen = []
    original = pol.step

    def spy(obs, state, mask, fused=None):
        seen.append(None if mask is None else mask.copy())
        return original(obs, state, mask, fused)

    pol.step = spy
    env = NavEnv(generate_suite(np.random.default_rng(0), 2, size=9), 3, cfg.env, np.random.default_rng(2))
    buf = Runner(pol, env, cfg.ppo, np.random.default_rng(3)).collect()
    rollout = seen[:64]
    seen.clear()
    seqs = np.array([(0, e) for e in range(3)])
    _, stats = _replay_minibatch(pol, buf, seqs, np.ones((64, 3)), np.zeros((64, 3)), cfg.ppo)
    replay = seen
    within = all(np.array_equal(m, rollout[0]) for m in rollout[:32])
    changes = not np.array_equal(rollout[0], rollout[32])
    matches = len(replay) == 32 and all(np.array_equal(m, rollout[0]) for m in replay)
    m = np.random.default_rng(0).normal(size=(4, 2))
    ls = np.random.default_rng(1).normal(size=(4, 2)) * 0.3
    self_kl = dml_loss((Tensor(m), Tensor(ls)), (Tensor(m), Tensor(ls))).item()
    mu, s1, s2 = 0.7, 0.5, 1.3
    kl = gaussian_kl(np.zeros(1), np.log([s1]), np.full(1, mu), np.log([s2])).item()
    closed = np.log(s2 / s1) + (s1 ** 2 + mu ** 2) / (2 * s2 ** 2) - 0.5
    ok = within and changes and matches and stats["approx_kl"] < 1e-20 and self_kl == 0.0 and abs(kl - closed) < 1e-9
    report(7, ok, f"mask frozen over 32 steps {within}, replay identical {matches}, "
                  f"dml(pi,pi)={self_kl}, KL error={abs(kl - closed):.1e}")


def test_criterion_8_navigation_memory_margin():
    s = nav_summary(ROOT)
    if not s["complete"]:
        acceptance_log.record_missing((8,), "missing nav runs")
        pytest.skip(f"run `python -m srulab.experiments nav --out {ROOT}` first")
    ok = s["margin"] >= 0.2 and s["train_seconds"] <= NAV_BUDGET_S
    report(8, ok, f"success sru-ours={s['rates']['sru-ours']} mlp={s['rates']['mlp']}, "
                  f"margin={s['margin']:.3f}, training {s['train_seconds'] / 60:.0f} min")


def test_criterion_9_analysis():
    rng = np.random.default_rng(9)
    x, mu = rng.normal(size=(50, 6)), rng.normal(size=6)
    md = mahalanobis(x, FeatureSet(mu, np.eye(6)))
    md_err = float(np.max(np.abs(md - np.linalg.norm(x - mu, axis=1))))
    res = pca_fit_project(rng.normal(size=(80, 7)) @ rng.normal(size=(7, 7)), 4)
    orth_err = float(np.max(np.abs(res.components @ res.components.T - np.eye(4))))
    b = success_by_distance([0.0, 1.0, 4.99, 5.0, 9.0, 10.0, 12.0], [1, 0, 1, 1, 0, 1, 1], [0, 5, 10])
    counts_ok = b.totals == [3, 3] and b.successes == [2, 2] and b.out_of_range == 1
    ok = md_err < 1e-12 and orth_err < 1e-9 and counts_ok
    report(9, ok, f"mahalanobis-euclidean {md_err:.1e}, PCA orthonormality {orth_err:.1e}, buckets exact {counts_ok}")


def _tree(folder: Path) -> dict:
    return {str(p.relative_to(folder)): p.read_bytes() for p in sorted(folder.rglob("*")) if p.is_file()}


def test_criterion_10_cli_byte_determinism(tmp_path):
    from srulab.depth.imageio import write_pfm
    from srulab.nav.maze import dead_end_maze, save_maze

    (tmp_path / "depth").mkdir()
    write_pfm(tmp_path / "depth" / "a.pfm", np.random.default_rng(0).uniform(0.5, 8, (24, 24)).astype(np.float32))
    (tmp_path / "mazes").mkdir()
    save_maze(dead_end_maze(np.random.default_rng(0), 9), tmp_path / "mazes" / "m.txt")
    feats = tmp_path / "f.csv"
    feats.write_text("a,b,c\n" + "\n".join(",".join(repr(float(v)) for v in r)
                                          for r in np.random.default_rng(1).normal(size=(20, 3))) + "\n")
    (tmp_path / "bench.json").write_text(json.dumps({"T": 4, "embed_dim": 8, "hidden_dim": 8, "head_hidden": [8],
                                                     "batches_per_epoch": 2, "batch_size": 8, "eval_episodes": 16}))
    (tmp_path / "nav.json").write_text(json.dumps({
        "ppo": {"n_envs": 2, "rollout_len": 8, "segment_len": 4, "minibatches": 1, "epochs": 1},
        "policy": {"hidden_dim": 8, "head_hidden": 8, "token_dim": 8, "heads": 2},
        "env": {"T_max": 6, "n_rays": 6, "n_scan": 4}, "n_train_mazes": 2, "maze_size": 9}))

    def commands(out):
        return {
            "bench-spatial": ["bench-spatial", "--cell", "sru-ours", "--epochs", "2", "--seed", "3",
                              "--config", str(tmp_path / "bench.json"), "--out", str(out / "bench")],
            "noise-apply": ["noise-apply", "--in", str(tmp_path / "depth"), "--seed", "3", "--out", str(out / "noise")],
            "nav-train": ["nav-train", "--config", str(tmp_path / "nav.json"), "--iterations", "2", "--seed", "3",
                          "--out", str(out / "train")],
            "nav-eval": ["nav-eval", "--ckpt", str(out / "train" / "policy_a.json"), "--mazes", str(tmp_path / "mazes"),
                         "--episodes", "3", "--stochastic", "--attention", "--seed", "3", "--out", str(out / "eval")],
            "analyze pca": ["analyze", "pca", "--in", str(feats), "--out", str(out / "pca.json")],
            "analyze md": ["analyze", "md", "--in", str(feats), "--out", str(out / "md.json")],
        }

    # both runs use the same output path, since resolved configs record input paths
    out = tmp_path / "run"
    results, trees = [], []
    for _ in range(2):
        if out.exists():
            shutil.rmtree(out)
        out.mkdir()
        results.append({name: cli_main(argv) for name, argv in commands(out).items()})
        trees.append(_tree(out))
    identical = trees[0] == trees[1]
    ok = identical and all(code == 0 for r in results for code in r.values())
    report(10, ok, f"{len(results[0])} subcommands, outputs identical across runs: {identical}")
