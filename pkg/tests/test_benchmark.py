import numpy as np
import pytest

from srulab.benchmark.episodes import generate_batch
from srulab.benchmark.train import (
    BenchmarkConfig,
    BenchmarkNet,
    DivergenceError,
    evaluate,
    evaluate_spatial_error_by_step,
    train_benchmark,
)
from srulab.tensor import DimensionError

CELLS = ["lstm", "gru", "sru-lstm", "sru-gru", "sru-ours"]


def tiny(**kw):
    base = dict(T=5, embed_dim=16, hidden_dim=16, head_hidden=[16], epochs=2, batches_per_epoch=3,
                batch_size=16, eval_episodes=32)
    base.update(kw)
    return BenchmarkConfig(**base)


def test_error_by_step_is_ordered_final_to_initial():
    targets = np.zeros((4, 3, 3))
    coords = np.zeros((4, 3, 3))
    coords[:, 0, 0] = 3.0  # observation 1 (earliest)
    coords[:, 2, 1] = 1.0  # observation 3 (final)
    assert evaluate_spatial_error_by_step(coords, targets) == [1.0, 0.0, 3.0]


def test_error_by_step_averages_euclidean_norms():
    rng = np.random.default_rng(0)
    c, t = rng.normal(size=(50, 6, 3)), rng.normal(size=(50, 6, 3))
    expect = np.linalg.norm(c - t, axis=-1).mean(axis=0)[::-1]
    np.testing.assert_allclose(evaluate_spatial_error_by_step(c, t), expect, rtol=1e-12)


@pytest.mark.parametrize("cell", CELLS)
def test_net_output_shapes(cell):
    cfg = tiny()
    net = BenchmarkNet(cell, cfg, np.random.default_rng(0))
    batch = generate_batch(5, 7, np.random.default_rng(1))
    coords, logits = net.forward(batch.inputs())
    assert coords.shape == (7, 5, 3) and logits.shape == (7, 5) and net.output_dim == 20
    pc, pl = net.predict(batch, chunk=3)
    np.testing.assert_allclose(pc, coords.data, rtol=1e-12)
    np.testing.assert_allclose(pl, logits.data, rtol=1e-12)


def test_net_rejects_wrong_episode_length():
    net = BenchmarkNet("gru", tiny(), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        net.forward(generate_batch(6, 2, np.random.default_rng(0)).inputs())


def test_evaluate_perfect_predictions():
    batch = generate_batch(5, 10, np.random.default_rng(0))

    class Oracle:
        def predict(self, episodes):
            return episodes.targets.copy(), np.where(episodes.labels > 0.5, 50.0, -50.0)

    res = evaluate(Oracle(), batch)
    assert res.spatial_mse == 0.0 and res.temporal_acc == 1.0 and res.temporal_bce < 1e-20
    assert res.per_step_error == [0.0] * 5


def test_zero_epochs_reports_untrained_losses_only():
    report, _ = train_benchmark("lstm", tiny(epochs=0), np.random.default_rng(0),
                                eval_rng=np.random.default_rng(1))
    assert report.epochs == [] and report.spatial_mse == []
    assert set(report.final) == {"spatial_mse", "temporal_bce", "temporal_acc", "per_step_error"}
    assert 0.0 <= report.final["temporal_acc"] <= 1.0 and len(report.final["per_step_error"]) == 5


def test_untrained_errors_have_no_recency_structure():
    net = BenchmarkNet("lstm", tiny(), np.random.default_rng(0))
    res = evaluate(net, generate_batch(5, 400, np.random.default_rng(1)))
    err = np.array(res.per_step_error)
    assert err.max() / err.min() < 1.5


def test_training_is_reproducible():
    r1, _ = train_benchmark("sru-ours", tiny(), np.random.default_rng(3), eval_rng=np.random.default_rng(4))
    r2, _ = train_benchmark("sru-ours", tiny(), np.random.default_rng(3), eval_rng=np.random.default_rng(4))
    assert r1.to_dict() == r2.to_dict()
    assert all(0.0 <= a <= 1.0 for a in r1.temporal_acc)


@pytest.mark.parametrize("cell", CELLS)
def test_short_training_reduces_held_out_loss(cell):
    cfg = tiny(epochs=25, batches_per_epoch=4, batch_size=32, bce_weight=10.0)
    before, _ = train_benchmark(cell, tiny(epochs=0), np.random.default_rng(5), eval_rng=np.random.default_rng(6))
    after, _ = train_benchmark(cell, cfg, np.random.default_rng(5), eval_rng=np.random.default_rng(6))
    total = {k: r.final["spatial_mse"] + cfg.bce_weight * r.final["temporal_bce"] for k, r in
             (("before", before), ("after", after))}
    assert after.final["spatial_mse"] < before.final["spatial_mse"]
    assert total["after"] < total["before"]


def test_callback_can_stop_early():
    seen = []
    report, _ = train_benchmark("gru", tiny(epochs=10), np.random.default_rng(0),
                                callback=lambda e, r, n: seen.append(e) or e == 1)
    assert seen == [0, 1] and report.epochs == [0, 1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    with pytest.raises(DivergenceError, match="epoch 0"):
        train_benchmark("lstm", tiny(lr=np.inf), np.random.default_rng(0))


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="bogus"):
        BenchmarkConfig.from_dict({"bogus": 1})
