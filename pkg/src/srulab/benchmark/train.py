"""MLP -> recurrent cell -> MLP network and its dual-loss training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import tensor as tn
from ..cells import RecurrentCell
from ..nn import MLP
from ..optim import NAdamState, NonFiniteGradientError, lr_schedule, nadam_step
from ..tensor import Tensor
from .episodes import STEP_INPUT_DIM, LandmarkEpisode, generate_batch

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class BenchmarkConfig:
    T: int = 15
    embed_dim: int = 128
    hidden_dim: int = 128
    head_hidden: list = field(default_factory=lambda: [128])
    epochs: int = 1000
    batches_per_epoch: int = 20
    batch_size: int = 256
    lr: float = 2e-3
    lr_reduced: float = 4e-4
    lr_milestone: int = 800
    mse_weight: float = 1.0
    bce_weight: float = 1.0
    eval_episodes: int = 1000

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown benchmark config keys: {sorted(unknown)}")
        return cls(**d)


class BenchmarkNet:
    """Per-step input MLP, one recurrent cell, and an output MLP read from h_T.

    Outputs ``4T`` values: 3T landmark coordinates (step-major) then T label logits.
    """

    def __init__(self, cell_kind: str, config: BenchmarkConfig, rng: np.random.Generator):
        self.config = config
        self.T = config.T
        self.encoder = MLP([STEP_INPUT_DIM, config.embed_dim], rng, final="relu")
        self.cell = RecurrentCell.create(cell_kind, config.embed_dim, config.hidden_dim, rng)
        self.head = MLP([config.hidden_dim, *config.head_hidden, 4 * config.T], rng)

    @property
    def output_dim(self) -> int:
        return 4 * self.T

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters("encoder.")
        out.update(self.cell.named_parameters("cell."))
        out.update(self.head.named_parameters("head."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def forward(self, inputs: np.ndarray) -> tuple[Tensor, Tensor]:
        """``inputs`` (B, T, 16) -> (coords (B, T, 3), logits (B, T))."""
        B, T, _ = inputs.shape
        if T != self.T:
            raise tn.DimensionError(f"network built for T={self.T}, got episodes with T={T}")
        emb = self.encoder(Tensor(inputs.reshape(B * T, -1)))
        emb = tn.reshape(emb, (B, T, -1))
        state = self.cell.initial_state(B)
        fused = self.cell.fuse()
        h = state.h
        for k in range(T):
            h, state, _ = self.cell.step(emb[:, k, :], state, fused)
        out = self.head(h)
        coords = tn.reshape(out[:, : 3 * T], (B, T, 3))
        return coords, out[:, 3 * T:]

    def predict(self, episodes: LandmarkEpisode, chunk: int = 500) -> tuple[np.ndarray, np.ndarray]:
        inputs = episodes.inputs()
        coords, logits = [], []
        with tn.no_grad():
            for s in range(0, inputs.shape[0], chunk):
                c, lg = self.forward(inputs[s:s + chunk])
                coords.append(c.data)
                logits.append(lg.data)
        return np.concatenate(coords), np.concatenate(logits)


@dataclass
class EvalResult:
    spatial_mse: float
    temporal_bce: float
    temporal_acc: float
    per_step_error: list  # mean Euclidean error, index T first, index 1 last


def evaluate(net: BenchmarkNet, episodes: LandmarkEpisode) -> EvalResult:
    coords, logits = net.predict(episodes)
    diff = coords - episodes.targets
    bce = tn.bce_with_logits(Tensor(logits), episodes.labels).item()
    acc = float(np.mean((logits > 0) == (episodes.labels > 0.5)))
    return EvalResult(
        spatial_mse=float(np.mean(diff**2)),
        temporal_bce=bce,
        temporal_acc=acc,
        per_step_error=evaluate_spatial_error_by_step(coords, episodes.targets),
    )


def evaluate_spatial_error_by_step(coords: np.ndarray, targets: np.ndarray) -> list[float]:
    """Mean Euclidean error per observation index, ordered final (T) to initial (1)."""
    err = np.linalg.norm(coords - targets, axis=-1).mean(axis=0)
    return [float(e) for e in err[::-1]]


@dataclass
class TrainReport:
    cell: str
    seed: int
    epochs: list = field(default_factory=list)
    spatial_mse: list = field(default_factory=list)
    temporal_bce: list = field(default_factory=list)
    temporal_acc: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def loss_terms(net: BenchmarkNet, batch: LandmarkEpisode, config: BenchmarkConfig):
    coords, logits = net.forward(batch.inputs())
    mse = tn.mean(tn.square(coords - Tensor(batch.targets)))
    bce = tn.bce_with_logits(logits, batch.labels)
    acc = float(np.mean((logits.data > 0) == (batch.labels > 0.5)))
    return config.mse_weight * mse + config.bce_weight * bce, mse.item(), bce.item(), acc


def train_benchmark(cell_kind: str, config: BenchmarkConfig, rng: np.random.Generator,
                    eval_rng: np.random.Generator | None = None, seed: int = 0,
                    net: BenchmarkNet | None = None, callback=None) -> tuple[TrainReport, BenchmarkNet]:
    """Train on freshly sampled episodes every batch.

    ``rng`` drives initialization and training data; ``eval_rng`` (if given)
    draws the held-out episodes summarized in ``report.final``. ``callback``
    is called as ``callback(epoch, report, net)`` after every epoch and may
    return True to stop early.
    """
    net = net or BenchmarkNet(cell_kind, config, rng)
    names = list(net.named_parameters())
    params = net.parameters()
    opt = NAdamState.for_params(params, lr=config.lr)
    report = TrainReport(cell=cell_kind, seed=seed)
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        opt.lr = lr_schedule(epoch, config.lr, config.lr_reduced, config.lr_milestone)
        sums = np.zeros(3)
        for _ in range(config.batches_per_epoch):
            batch = generate_batch(config.T, config.batch_size, rng)
            loss, mse, bce, acc = loss_terms(net, batch, config)
            if not np.isfinite(loss.item()):
                raise DivergenceError(f"{cell_kind}: non-finite loss at epoch {epoch} (mse={mse}, bce={bce})")
            tn.zero_grad(params)
            tn.backward(loss)
            try:
                nadam_step(params, [p.grad for p in params], opt, names)
            except NonFiniteGradientError as exc:
                raise DivergenceError(f"{cell_kind}: epoch {epoch}: {exc}") from exc
            sums += (mse, bce, acc)
        sums /= config.batches_per_epoch
        report.epochs.append(epoch)
        report.spatial_mse.append(float(sums[0]))
        report.temporal_bce.append(float(sums[1]))
        report.temporal_acc.append(float(sums[2]))
        log.info("%s epoch %d mse %.4f bce %.4f acc %.4f (%.0fs)", cell_kind, epoch, *sums,
                 time.perf_counter() - t0)
        if callback is not None and callback(epoch, report, net):
            break
    if eval_rng is not None:
        held_out = generate_batch(config.T, config.eval_episodes, eval_rng)
        report.final = asdict(evaluate(net, held_out))
    return report, net
