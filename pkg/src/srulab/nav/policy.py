"""Attention-compressed recurrent Gaussian policy with temporally consistent dropout."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .. import tensor as tn
from ..cells import CELL_KINDS, CellState, RecurrentCell
from ..nn import MLP, Linear, uniform_param
from ..tensor import ContractError, DimensionError, Tensor
from .env import GOAL_DIM, PROP_DIM, Observation

MEMORYLESS = "mlp"
LOG_2PI = float(np.log(2 * np.pi))


# -- attention -------------------------------------------------------------------


class AttentionCompressor:
    """Self-attention over K tokens, then cross-attention with one state query.

    Returns a single C-vector per sample: per head, a convex combination of
    value vectors with weights from the query.
    """

    def __init__(self, dim: int, query_dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"token dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        b = 1.0 / np.sqrt(dim)
        self.Wq = uniform_param(rng, (dim, dim), b)
        self.Wk = uniform_param(rng, (dim, dim), b)
        self.Wv = uniform_param(rng, (dim, dim), b)
        self.Wo = uniform_param(rng, (dim, dim), b)
        self.query = Linear(query_dim, dim, rng)
        self.Wk2 = uniform_param(rng, (dim, dim), b)
        self.Wv2 = uniform_param(rng, (dim, dim), b)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: getattr(self, k) for k in ("Wq", "Wk", "Wv", "Wo", "Wk2", "Wv2")}
        out.update(self.query.named_parameters(prefix + "query."))
        return out

    def __call__(self, tokens, query_state):
        return attention_compress(tokens, query_state, self)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    N, K, C = x.shape
    return tn.transpose(tn.reshape(x, (N, K, heads, C // heads)), (0, 2, 1, 3))


def attention_compress(tokens, query_state, p: AttentionCompressor):
    """``tokens`` (N, K, C), ``query_state`` (N, Q) -> (compressed (N, C), weights (N, heads, K)).

    The self-attention stage is residual: ``F' = F + MHA(F) Wo``.
    """
    tokens, query_state = tn.as_tensor(tokens), tn.as_tensor(query_state)
    if tokens.ndim != 3 or tokens.shape[1] < 1:
        raise ContractError(f"attention_compress needs (N, K>=1, C) tokens, got {tokens.shape}")
    N, K, C = tokens.shape
    if C != p.dim:
        raise DimensionError(f"token dim {C} != compressor dim {p.dim}")
    h, d = p.heads, C // p.heads
    scale = 1.0 / np.sqrt(d)
    q = _split_heads(tn.matmul(tokens, p.Wq), h)
    k = _split_heads(tn.matmul(tokens, p.Wk), h)
    v = _split_heads(tn.matmul(tokens, p.Wv), h)
    a = tn.softmax(tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))) * scale, axis=-1)
    mixed = tn.reshape(tn.transpose(tn.matmul(a, v), (0, 2, 1, 3)), (N, K, C))
    refined = tokens + tn.matmul(mixed, p.Wo)
    q2 = tn.reshape(p.query(query_state), (N, h, 1, d))
    k2 = _split_heads(tn.matmul(refined, p.Wk2), h)
    v2 = _split_heads(tn.matmul(refined, p.Wv2), h)
    w = tn.softmax(tn.matmul(q2, tn.transpose(k2, (0, 1, 3, 2))) * scale, axis=-1)  # (N, h, 1, K)
    out = tn.reshape(tn.matmul(w, v2), (N, C))
    return out, tn.reshape(w, (N, h, K))


# -- dropout and distributions ------------------------------------------------------


def tc_dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask ``Bernoulli(1-p) / (1-p)``, drawn once per rollout segment."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) < 1.0 - p) / (1.0 - p)


def gaussian_log_prob(x, mean, log_std) -> Tensor:
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (tn.as_tensor(x) - mean) / tn.exp(log_std)
    return tn.tsum(z * z * -0.5 - log_std, axis=-1) - 0.5 * LOG_2PI * mean.shape[-1]


def gaussian_entropy(log_std) -> Tensor:
    """Entropy of a diagonal Gaussian with per-dimension ``log_std``."""
    return tn.tsum(log_std) + 0.5 * (1.0 + LOG_2PI) * log_std.shape[-1]


def gaussian_kl(mean_p, log_std_p, mean_q, log_std_q) -> Tensor:
    """KL(p || q) for diagonal Gaussians, summed over the last axis."""
    mean_p, mean_q = tn.as_tensor(mean_p), tn.as_tensor(mean_q)
    log_std_p, log_std_q = tn.as_tensor(log_std_p), tn.as_tensor(log_std_q)
    var_ratio = tn.exp((log_std_p - log_std_q) * 2.0)
    diff = (mean_p - mean_q) / tn.exp(log_std_q)
    return tn.tsum((var_ratio + diff * diff) * 0.5 + (log_std_q - log_std_p) - 0.5, axis=-1)


def dml_loss(dist_a, dist_b) -> Tensor:
    """Batch mean of the symmetric KL ``KL(a||b) + KL(b||a)``; ``dist = (mean, log_std)``."""
    ma, la = dist_a
    mb, lb = dist_b
    return tn.mean(gaussian_kl(ma, la, mb, lb) + gaussian_kl(mb, lb, ma, la))


# -- policy ------------------------------------------------------------------------


@dataclass
class PolicyConfig:
    cell: str = "sru-ours"  # any recurrent cell kind, or "mlp" for the memoryless ablation
    token_dim: int = 32
    heads: int = 4
    hidden_dim: int = 64
    head_hidden: int = 64
    dropout: float = 0.1
    privileged_critic: bool = True
    init_log_std: float = -0.5
    action_offset: tuple = (0.5, 0.0)
    action_scale: tuple = (1.0, 1.5)

    def __post_init__(self):
        if self.cell not in (*CELL_KINDS, MEMORYLESS):
            raise ValueError(f"unknown policy cell {self.cell!r}")
        self.action_offset = tuple(self.action_offset)
        self.action_scale = tuple(self.action_scale)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown PolicyConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["action_offset"], d["action_scale"] = list(self.action_offset), list(self.action_scale)
        return d


class MemorylessCell:
    """Drop-in for a recurrent cell that ignores its state: ``h = tanh(W x + b)``."""

    kind = MEMORYLESS

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.hidden_dim = hidden_dim
        self.layer = Linear(input_dim, hidden_dim, rng)

    def initial_state(self, batch: int | None = None) -> CellState:
        shape = (self.hidden_dim,) if batch is None else (batch, self.hidden_dim)
        return CellState(Tensor(np.zeros(shape)), None)

    def fuse(self):
        return None

    def step(self, x, state: CellState, fused=None):
        h = tn.tanh(self.layer(x))
        return h, CellState(h, None), None

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return self.layer.named_parameters(prefix)


@dataclass
class StepOutput:
    mean: Tensor  # (N, 2) in raw action units
    log_std: Tensor  # (2,)
    value: Tensor  # (N,)
    state: CellState
    weights: np.ndarray  # (N, heads, K) cross-attention weights


class PolicyNet:
    """rays -> tokens -> attention_compress -> [.., prop, goal] -> cell -> dropout -> heads."""

    def __init__(self, config: PolicyConfig, n_rays: int, n_scan: int, max_range: float,
                 rng: np.random.Generator):
        self.config = config
        self.n_rays, self.n_scan, self.max_range = n_rays, n_scan, max_range
        C = config.token_dim
        self.tokenizer = Linear(3, C, rng)
        q_dim = PROP_DIM + GOAL_DIM
        self.compressor = AttentionCompressor(C, q_dim, config.heads, rng)
        in_dim = C + q_dim
        if config.cell == MEMORYLESS:
            self.cell = MemorylessCell(in_dim, config.hidden_dim, rng)
        else:
            self.cell = RecurrentCell.create(config.cell, in_dim, config.hidden_dim, rng)
        self.actor = MLP([config.hidden_dim, config.head_hidden, 2], rng, activation="tanh")
        self.actor.layers[-1].W.data *= 0.1  # start near the offset action
        self.log_std = Tensor(np.full(2, config.init_log_std), requires_grad=True)
        critic_in = config.hidden_dim + (n_scan if config.privileged_critic else 0)
        self.critic = MLP([critic_in, config.head_hidden, 1], rng, activation="tanh")

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.tokenizer.named_parameters("tokenizer.")
        out.update(self.compressor.named_parameters("attn."))
        out.update(self.cell.named_parameters("cell."))
        out.update(self.actor.named_parameters("actor."))
        out["log_std"] = self.log_std
        out.update(self.critic.named_parameters("critic."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def initial_state(self, n: int) -> CellState:
        return self.cell.initial_state(n)

    def to_action(self, raw: np.ndarray) -> np.ndarray:
        return np.asarray(self.config.action_offset) + np.asarray(self.config.action_scale) * raw

    def _tokens(self, rays: np.ndarray) -> Tensor:
        N, K = rays.shape
        if K != self.n_rays:
            raise DimensionError(f"policy built for {self.n_rays} rays, got {K}")
        ang = np.linspace(-1.0, 1.0, K)
        feats = np.stack([rays / self.max_range, np.broadcast_to(np.cos(ang), (N, K)),
                          np.broadcast_to(np.sin(ang), (N, K))], axis=-1)
        return tn.relu(self.tokenizer(Tensor(feats)))

    def step(self, obs: Observation, state: CellState, mask: np.ndarray | None,
             fused=None) -> StepOutput:
        query = np.concatenate([obs.prop, obs.goal], axis=-1)
        compressed, w = attention_compress(self._tokens(obs.rays), query, self.compressor)
        x = tn.concat([compressed, Tensor(query)], axis=-1)
        h, state, _ = self.cell.step(x, state, fused)
        hd = h * Tensor(mask) if mask is not None else h
        mean = self.actor(hd)
        critic_in = hd
        if self.config.privileged_critic:
            if obs.scan is None:
                raise ContractError("privileged critic needs the 360 degree scan")
            critic_in = tn.concat([hd, Tensor(obs.scan / self.max_range)], axis=-1)
        value = tn.reshape(self.critic(critic_in), (-1,))
        return StepOutput(mean, self.log_std, value, state, w.data)

    def fuse(self):
        return self.cell.fuse()


def reset_state(state: CellState, keep: np.ndarray) -> CellState:
    """Zero the recurrent state of rows where ``keep`` is 0 (episode boundaries)."""
    k = Tensor(np.asarray(keep, dtype=np.float64)[:, None])
    return CellState(state.h * k, None if state.c is None else state.c * k)
