"""Recurrent PPO with segment replay, frozen dropout masks and deep mutual learning."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import tensor as tn
from ..cells import CellState
from ..nn import load_params_json, params_to_json
from ..optim import NAdamState, NonFiniteGradientError, nadam_step
from ..tensor import Tensor
from .env import EnvConfig, NavEnv, Observation
from .maze import MazeSpec
from .policy import (
    PolicyConfig,
    PolicyNet,
    dml_loss,
    gaussian_entropy,
    gaussian_log_prob,
    reset_state,
    tc_dropout_mask,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, stats: dict):
        super().__init__(f"{msg}; stats={stats}")
        self.stats = stats


@dataclass
class PPOConfig:
    n_envs: int = 16
    rollout_len: int = 128
    segment_len: int = 32
    epochs: int = 4
    minibatches: int = 2
    clip: float = 0.2
    gae_lambda: float = 0.95
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    dml_coef: float = 0.05
    lr: float = 1e-3
    max_grad_norm: float = 1.0
    iterations: int = 100

    def __post_init__(self):
        if self.rollout_len % self.segment_len:
            raise ValueError("rollout_len must be a multiple of segment_len")

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown PPOConfig keys: {sorted(unknown)}")
        return cls(**d)


# -- advantages -----------------------------------------------------------------


def compute_gae(rewards, values, dones, last_value, gamma: float, lam: float):
    """Generalized advantage estimates over (L, N) arrays.

    ``dones[t]`` marks an episode that ended after step t; no value is
    bootstrapped across it. Returns ``(advantages, returns)``.
    """
    rewards, values, dones = (np.asarray(a, dtype=np.float64) for a in (rewards, values, dones))
    L = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = np.asarray(last_value, dtype=np.float64)
    for t in range(L - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# -- rollout storage ----------------------------------------------------------------


@dataclass
class RolloutBuffer:
    rays: np.ndarray  # (L, N, K)
    prop: np.ndarray
    goal_rel: np.ndarray
    scan: np.ndarray
    raw_actions: np.ndarray  # (L, N, 2) pre-offset Gaussian samples
    log_probs: np.ndarray  # (L, N)
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    starts: np.ndarray  # (L, N): 1 where the recurrent state was reset before the step
    seg_states: list  # per segment: CellState of numpy-backed tensors (N, H)
    masks: list  # per segment: (N, H) dropout mask
    teacher_mean: np.ndarray | None = None  # (L, N, 2) partner policy on the same observations
    teacher_log_std: np.ndarray | None = None  # (L, 2)
    last_value: np.ndarray | None = None

    def observation(self, t: int, idx=slice(None)) -> Observation:
        return Observation(self.rays[t, idx], self.prop[t, idx], self.goal_rel[t, idx], self.scan[t, idx])


def _np_state(state: CellState) -> CellState:
    return CellState(Tensor(state.h.data.copy()), None if state.c is None else Tensor(state.c.data.copy()))


class Runner:
    """Owns one policy's environments, recurrent state and current dropout mask."""

    def __init__(self, policy: PolicyNet, env: NavEnv, config: PPOConfig, rng: np.random.Generator):
        self.policy, self.env, self.config, self.rng = policy, env, config, rng
        self.obs = env.reset()
        self.state = policy.initial_state(env.n)
        self.starts = np.ones(env.n)
        self.episodes: list = []

    def collect(self, partner: PolicyNet | None = None) -> RolloutBuffer:
        cfg, env, pol = self.config, self.env, self.policy
        L, N = cfg.rollout_len, env.n
        H = pol.config.hidden_dim
        keys = ("rays", "prop", "goal_rel", "scan")
        store = {k: np.empty((L,) + getattr(self.obs, k).shape) for k in keys}
        raw = np.empty((L, N, 2))
        logp, values, rewards, dones, starts = (np.empty((L, N)) for _ in range(5))
        seg_states, masks = [], []
        t_mean = np.empty((L, N, 2)) if partner is not None else None
        t_log_std = np.empty((L, 2)) if partner is not None else None
        p_state = getattr(self, "partner_state", None)
        if partner is not None and p_state is None:
            p_state = partner.initial_state(N)
        fused = pol.fuse()
        p_fused = partner.fuse() if partner is not None else None
        with tn.no_grad():
            for t in range(L):
                if t % cfg.segment_len == 0:
                    seg_states.append(_np_state(self.state))
                    masks.append(tc_dropout_mask((N, H), pol.config.dropout, self.rng))
                for k in keys:
                    store[k][t] = getattr(self.obs, k)
                starts[t] = self.starts
                out = pol.step(self.obs, self.state, masks[-1], fused)
                std = np.exp(out.log_std.data)
                sample = out.mean.data + std * self.rng.standard_normal((N, 2))
                raw[t] = sample
                logp[t] = gaussian_log_prob(sample, out.mean, out.log_std).data
                values[t] = out.value.data
                if partner is not None:
                    p_out = partner.step(self.obs, p_state, None, p_fused)
                    t_mean[t] = p_out.mean.data
                    t_log_std[t] = p_out.log_std.data
                    p_state = p_out.state
                self.obs, rewards[t], done, info = env.step(pol.to_action(sample))
                dones[t] = done
                self.episodes.extend(info["episodes"])
                keep = 1.0 - done
                self.state = reset_state(out.state, keep)
                if partner is not None:
                    p_state = reset_state(p_state, keep)
                self.starts = done.astype(np.float64)
            last = pol.step(self.obs, self.state, masks[-1], fused).value.data
        self.partner_state = p_state
        return RolloutBuffer(store["rays"], store["prop"], store["goal_rel"], store["scan"], raw, logp,
                             values, rewards, dones, starts, seg_states, masks, t_mean, t_log_std, last)


# -- update -------------------------------------------------------------------------


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def _replay_minibatch(policy: PolicyNet, buf: RolloutBuffer, seqs: np.ndarray, adv: np.ndarray,
                      ret: np.ndarray, config: PPOConfig):
    """Re-run the policy over whole segments and build the PPO loss.

    ``seqs`` holds (segment, env) pairs. The stored segment-start state and the
    segment's frozen dropout mask are reused exactly.
    """
    S = config.segment_len
    seg, env = seqs[:, 0], seqs[:, 1]
    h0 = np.stack([buf.seg_states[s].h.data[e] for s, e in seqs])
    c0 = None if buf.seg_states[0].c is None else np.stack([buf.seg_states[s].c.data[e] for s, e in seqs])
    state = CellState(Tensor(h0), None if c0 is None else Tensor(c0))
    mask = np.stack([buf.masks[s][e] for s, e in seqs])
    fused = policy.fuse()
    pg, vl, ent, dml, kl, clipped = [], [], [], [], [], []
    for k in range(S):
        t = seg * S + k
        if k > 0:
            state = reset_state(state, 1.0 - buf.starts[t, env])
        obs = Observation(buf.rays[t, env], buf.prop[t, env], buf.goal_rel[t, env], buf.scan[t, env])
        out = policy.step(obs, state, mask, fused)
        state = out.state
        a = adv[t, env]
        logp = gaussian_log_prob(buf.raw_actions[t, env], out.mean, out.log_std)
        ratio = tn.exp(logp - Tensor(buf.log_probs[t, env]))
        surr = tn.minimum(ratio * Tensor(a), tn.clip(ratio, 1 - config.clip, 1 + config.clip) * Tensor(a))
        pg.append(tn.mean(surr) * -1.0)
        vl.append(tn.mean(tn.square(out.value - Tensor(ret[t, env]))))
        if buf.teacher_mean is not None and config.dml_coef > 0:
            teacher = (Tensor(buf.teacher_mean[t, env]), Tensor(buf.teacher_log_std[t][None, :]))
            dml.append(dml_loss((out.mean, out.log_std), teacher))
        r = ratio.data
        kl.append(float(np.mean((r - 1) - np.log(r))))
        clipped.append(float(np.mean(np.abs(r - 1) > config.clip)))
    ent = gaussian_entropy(policy.log_std)
    loss = tn.stack(pg).mean() + tn.stack(vl).mean() * config.value_coef - ent * config.entropy_coef
    dml_val = 0.0
    if dml:
        d = tn.stack(dml).mean()
        loss = loss + d * config.dml_coef
        dml_val = d.item()
    stats = {"policy_loss": float(np.mean([p.item() for p in pg])), "value_loss": float(np.mean([v.item() for v in vl])),
             "entropy": ent.item(), "approx_kl": float(np.mean(kl)), "clip_frac": float(np.mean(clipped)),
             "dml": dml_val}
    return loss, stats


def ppo_update(policy: PolicyNet, buf: RolloutBuffer, opt: NAdamState, config: PPOConfig, gamma: float,
               rng: np.random.Generator, names: list[str] | None = None) -> dict:
    """Four-epoch clipped PPO over all (segment, env) sequences of one rollout."""
    adv, ret = compute_gae(buf.rewards, buf.values, buf.dones, buf.last_value, gamma, config.gae_lambda)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n_seg = config.rollout_len // config.segment_len
    N = buf.rewards.shape[1]
    seqs = np.array([(s, e) for s in range(n_seg) for e in range(N)])
    params = policy.parameters()
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(len(seqs))
        for chunk in np.array_split(order, config.minibatches):
            loss, stats = _replay_minibatch(policy, buf, seqs[chunk], adv, ret, config)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged("non-finite PPO loss", stats)
            tn.zero_grad(params)
            tn.backward(loss)
            grads = [p.grad for p in params]
            stats["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            try:
                nadam_step(params, grads, opt, names)
            except NonFiniteGradientError as exc:
                raise TrainingDiverged(str(exc), stats) from exc
            history.append(stats)
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]}


# -- training and evaluation -------------------------------------------------------------


@dataclass
class NavTrainConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    dml: bool = True
    maze_kinds: tuple = ("dead-end",)
    n_train_mazes: int = 64
    maze_size: int = 15
    random_start: float = 0.5  # training-only: spawn on a random free cell with this probability

    @classmethod
    def from_dict(cls, d: dict) -> "NavTrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown nav config keys: {sorted(unknown)}")
        env = EnvConfig.from_dict(d.pop("env", {}))
        policy = PolicyConfig.from_dict(d.pop("policy", {}))
        ppo = PPOConfig.from_dict(d.pop("ppo", {}))
        if "maze_kinds" in d:
            d["maze_kinds"] = tuple(d["maze_kinds"])
        return cls(env=env, policy=policy, ppo=ppo, **d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        d["maze_kinds"] = list(self.maze_kinds)
        return d


def build_policy(config: NavTrainConfig, rng: np.random.Generator) -> PolicyNet:
    e = config.env
    return PolicyNet(config.policy, e.n_rays, e.n_scan, e.max_range, rng)


def policy_checkpoint(policy: PolicyNet, config: NavTrainConfig) -> dict:
    return {"config": config.to_dict(), "params": params_to_json(policy.named_parameters())}


def load_policy(blob: dict) -> tuple[PolicyNet, NavTrainConfig]:
    config = NavTrainConfig.from_dict(blob["config"])
    policy = build_policy(config, np.random.default_rng(0))
    load_params_json(policy.named_parameters(), blob["params"])
    return policy, config


def train_nav(config: NavTrainConfig, mazes: list[MazeSpec], streams, callback=None):
    """Train one policy (or a DML pair) with PPO.

    ``streams`` maps purpose names to Generators: ``init-a``, ``init-b``,
    ``env-a``, ``env-b``, ``ppo-a``, ``ppo-b``. Returns
    ``(policies, history)``; ``policies[0]`` is the primary policy.
    """
    n_pol = 2 if config.dml else 1
    tags = "ab"[:n_pol]
    policies = [build_policy(config, streams(f"init-{t}")) for t in tags]
    runners = [Runner(p, NavEnv(mazes, config.ppo.n_envs, config.env, streams(f"env-{t}"),
                                     random_start=config.random_start), config.ppo,
                      streams(f"ppo-{t}")) for p, t in zip(policies, tags)]
    opts = [NAdamState.for_params(p.parameters(), lr=config.ppo.lr) for p in policies]
    names = [list(p.named_parameters()) for p in policies]
    gamma = config.env.reward.gamma
    history = []
    t0 = time.perf_counter()
    for it in range(config.ppo.iterations):
        bufs = []
        for k, r in enumerate(runners):
            partner = policies[1 - k] if n_pol == 2 else None
            bufs.append(r.collect(partner))
        row = {"iteration": it}
        for k, (p, b, r) in enumerate(zip(policies, bufs, runners)):
            stats = ppo_update(p, b, opts[k], config.ppo, gamma, r.rng, names[k])
            done_eps = r.episodes
            r.episodes = []
            sr = float(np.mean([e.success for e in done_eps])) if done_eps else float("nan")
            row[f"{tags[k]}_success"] = sr
            row[f"{tags[k]}_return"] = float(b.rewards.sum(axis=0).mean())
            row.update({f"{tags[k]}_{n}": v for n, v in stats.items()})
        row["elapsed_s"] = time.perf_counter() - t0
        history.append(row)
        log.info("it %d %s", it, {k: round(v, 4) for k, v in row.items() if isinstance(v, float)})
        if callback is not None and callback(it, row, policies):
            break
    return policies, history


@dataclass
class NavEvalResult:
    success_rate: float
    mean_episode_length: float
    episodes: list

    def to_dict(self) -> dict:
        return {"success_rate": self.success_rate, "mean_episode_length": self.mean_episode_length,
                "episodes": [asdict(e) for e in self.episodes]}


def evaluate_nav(policy: PolicyNet, mazes: list[MazeSpec], episodes: int, env_config: EnvConfig,
                 rng: np.random.Generator, n_envs: int = 50, deterministic: bool = True,
                 noise: bool = False) -> NavEvalResult:
    """Roll out ``episodes`` episodes cycling through ``mazes``; success = reaching the goal tolerance.

    Episode length is the step of first arrival (``T_max`` on failure).
    """
    n_envs = min(n_envs, episodes)
    env = NavEnv(mazes, n_envs, env_config, rng, noise=noise, maze_order="cycle")
    obs = env.reset()
    state = policy.initial_state(n_envs)
    ones = np.ones((n_envs, policy.config.hidden_dim))
    fused = policy.fuse()
    logs = []
    started = n_envs
    active = np.ones(n_envs, dtype=bool)
    with tn.no_grad():
        while active.any():
            out = policy.step(obs, state, ones, fused)
            raw = out.mean.data
            if not deterministic:
                raw = raw + np.exp(out.log_std.data) * rng.standard_normal(raw.shape)
            obs, _, done, info = env.step(policy.to_action(raw))
            ended = iter(info["episodes"])
            for e in np.flatnonzero(done):
                rec = next(ended)
                if active[e]:
                    logs.append(rec)
                    if started < episodes:
                        started += 1
                    else:
                        active[e] = False
            state = reset_state(out.state, 1.0 - done)
    logs = logs[:episodes]
    return NavEvalResult(float(np.mean([e.success for e in logs])),
                         float(np.mean([e.steps for e in logs])), logs)


def record_attention(policy: PolicyNet, maze: MazeSpec, env_config: EnvConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Cross-attention weights ``(steps, heads, K)`` of one deterministic episode on ``maze``."""
    env = NavEnv([maze], 1, env_config, rng, noise=False)
    obs = env.reset()
    state = policy.initial_state(1)
    ones = np.ones((1, policy.config.hidden_dim))
    fused = policy.fuse()
    rows = []
    with tn.no_grad():
        for _ in range(env_config.T_max):
            out = policy.step(obs, state, ones, fused)
            rows.append(np.asarray(out.weights)[0])
            obs, _, done, _ = env.step(policy.to_action(out.mean.data))
            state = out.state
            if done[0]:
                break
    return np.stack(rows)


def save_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
