import math

import numpy as np
import pytest

from conftest import synthetic_images
from tacnn.data_io import BatchPlan
from tacnn.errors import NumericError, SummaryError
from tacnn.layers import Model, tacnn_spec
from tacnn.oracle import finite_diff
from tacnn.training import (
    AdamState,
    EpochMetrics,
    TrainConfig,
    adam_step,
    best_epoch_selection,
    cross_entropy,
    cross_entropy_batch,
    fit,
    multi_seed_summary,
    stream,
    train_epoch,
)


def small_data(count, seed):
    images, labels = synthetic_images(count, size=8, seed=seed)
    return images[:, None].astype(np.float64) / 255.0, labels.astype(np.int64)


def test_cross_entropy_uniform_logits():
    loss, grad = cross_entropy(np.zeros(10), 3)
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    expected = np.full(10, 0.1)
    expected[3] -= 1
    np.testing.assert_allclose(grad, expected, atol=1e-15)


def test_cross_entropy_stable_for_large_logits():
    loss, grad = cross_entropy(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))
    with pytest.raises(NumericError):
        cross_entropy_batch(np.array([[np.inf, 0.0]]), np.array([0]))


def test_adam_first_step_moves_by_lr():
    p = [np.array([1.0, -2.0, 3.0])]
    state = AdamState.for_params(p, lr=0.1)
    adam_step(p, [np.array([0.5, -4.0, 0.0])], state)
    np.testing.assert_allclose(p[0], [0.9, -1.9, 3.0], atol=1e-7)
    assert state.t == 1


def test_cross_entropy_saturated():
    logits = np.full(10, -30.0)
    logits[2] = 30.0
    assert cross_entropy(logits, 2)[0] == pytest.approx(0.0, abs=1e-20)


def test_cross_entropy_gradient_matches_finite_differences(rng):
    z = rng.standard_normal(10)
    (numeric,) = finite_diff(lambda: cross_entropy(z, 4)[0], [z])
    np.testing.assert_allclose(cross_entropy(z, 4)[1], numeric, atol=1e-9)


def test_adam_zero_gradient_and_monotone_steps():
    p = [np.array([0.5, -0.5])]
    state = AdamState.for_params(p)
    adam_step(p, [np.zeros(2)], state)
    np.testing.assert_array_equal(p[0], [0.5, -0.5])
    assert state.t == 1
    trail = [p[0].copy()]
    for _ in range(2):
        adam_step(p, [np.array([1.0, -1.0])], state)
        trail.append(p[0].copy())
    assert trail[0][0] > trail[1][0] > trail[2][0]
    assert trail[0][1] < trail[1][1] < trail[2][1]


def test_zero_learning_rate_leaves_params_unchanged(rng):
    model = Model(tacnn_spec((1,), (1, 8, 8), hidden=8), rng=rng, dtype=np.float64)
    before = [p.copy() for p in model.flat_params()]
    x, y = small_data(20, 0)
    opt = AdamState.for_params(model.flat_params(), lr=0.0)
    fit(model, opt, (x, y), (x, y), TrainConfig(epochs=1, batch_size=5, precision="f64"))
    for a, b in zip(before, model.flat_params()):
        np.testing.assert_array_equal(a, b)


def test_single_sample_memorized_within_200_steps(rng):
    # the smoke example does not fix a rate; at 2e-4 the loss is still ~0.02 at step 200
    model = Model(tacnn_spec((1,)), rng=stream(0, "init"))
    x = rng.random((1, 1, 28, 28)).astype(np.float32)
    y = np.array([7])
    opt = AdamState.for_params(model.flat_params(), lr=1e-3)
    cfg = TrainConfig(batch_size=1, lr=1e-3)
    first = model.loss_and_grads(x, y)[0]
    for step in range(200):
        train_epoch(model, opt, x, y, cfg, step + 1)
    assert opt.t == 200
    assert model.loss_and_grads(x, y)[0] < 0.01 < first


def test_batch_gradient_is_mean_of_sample_gradients(rng):
    model = Model(tacnn_spec((2,), (1, 8, 8), hidden=8), rng=rng, dtype=np.float64)
    x, y = small_data(6, 1)
    _, _, batch = model.loss_and_grads(x, y)
    singles = [model.loss_and_grads(x[i:i + 1], y[i:i + 1])[2] for i in range(6)]
    for j, g in enumerate(sum(batch, [])):
        mean = np.mean([sum(s, [])[j] for s in singles], axis=0)
        np.testing.assert_allclose(g, mean, atol=1e-10)


def test_training_learns_synthetic_task():
    x, y = small_data(300, 2)
    vx, vy = small_data(100, 3)
    model = Model(tacnn_spec((2,), (1, 8, 8), hidden=16), rng=stream(0, "init"), dtype=np.float64)
    opt = AdamState.for_params(model.flat_params(), lr=5e-3)
    result = fit(model, opt, (x, y), (vx, vy), TrainConfig(epochs=8, batch_size=20, precision="f64"))
    assert result.history[-1].train_loss < result.history[0].train_loss
    assert result.best_acc > 0.8


def test_fit_outputs_and_determinism(tmp_path):
    x, y = small_data(60, 4)
    vx, vy = small_data(30, 5)
    texts = []
    for run in ("a", "b"):
        model = Model(tacnn_spec((1,), (1, 8, 8), hidden=8), rng=stream(9, "init"))
        opt = AdamState.for_params(model.flat_params(), lr=1e-3)
        cfg = TrainConfig(epochs=3, batch_size=16, seed=9)
        fit(model, opt, (x.astype(np.float32), y), (vx.astype(np.float32), vy), cfg, tmp_path / run)
        assert {p.name for p in (tmp_path / run).iterdir()} == {"metrics.csv", "best.ckpt", "final.ckpt"}
        texts.append((tmp_path / run / "metrics.csv").read_bytes())
    assert texts[0] == texts[1]
    lines = texts[0].decode().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc,seconds"
    assert len(lines) == 4


def test_fit_rejects_zero_epochs(rng):
    model = Model(tacnn_spec((1,), (1, 8, 8), hidden=8), rng=rng)
    x, y = small_data(5, 0)
    with pytest.raises(SummaryError):
        fit(model, AdamState.for_params(model.flat_params()), (x, y), (x, y), TrainConfig(epochs=0))


def test_streams_are_independent_and_reproducible():
    a = stream(3, "shuffle", 1).random(4)
    np.testing.assert_array_equal(a, stream(3, "shuffle", 1).random(4))
    assert not np.array_equal(a, stream(3, "shuffle", 2).random(4))
    assert not np.array_equal(stream(3, "init").random(4), stream(3, "shuffle").random(4))


def test_batch_plan_keeps_partial_batch():
    plan = BatchPlan.shuffled(250, 100, np.random.default_rng(0))
    sizes = [len(b) for b in plan.batches()]
    assert sizes == [100, 100, 50]
    assert sorted(np.concatenate(list(plan.batches()))) == list(range(250))


def test_best_epoch_selection():
    accs = [0.80, 0.85, 0.84, 0.85]
    history = [EpochMetrics(i + 1, 0.0, 0.0, a) for i, a in enumerate(accs)]
    assert best_epoch_selection(history) == (0.85, 2)
    with pytest.raises(SummaryError):
        best_epoch_selection([])


def test_multi_seed_summary():
    mean, std = multi_seed_summary([0.936, 0.937, 0.9379])
    assert mean == pytest.approx(0.93697, abs=1e-5)
    assert std == pytest.approx(0.00095, abs=1e-5)
    with pytest.raises(SummaryError):
        multi_seed_summary([0.9])
