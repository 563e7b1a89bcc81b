"""Loss, Adam, the epoch loop and the metric bookkeeping around it."""
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data_io import BatchPlan
from .errors import DimensionError, NumericError, SummaryError

STREAMS = {"init": 0, "shuffle": 1}
METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_acc", "seconds"]


def stream(seed, name, *extra):
    """Independent generator for a named consumer of the run seed."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *extra))
    return np.random.Generator(np.random.PCG64(seq))


def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` and its gradient ``softmax - onehot``."""
    losses, grads = cross_entropy_batch(np.asarray(logits)[None], np.array([label]))
    return float(losses[0]), grads[0]


def cross_entropy_batch(logits, labels):
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise DimensionError(f"labels must lie in 0..{logits.shape[1] - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    losses = log_z - shifted[rows, labels]
    grads = np.exp(shifted - log_z[:, None])
    grads[rows, labels] -= 1
    return losses, grads


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=2e-4):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr)


def adam_step(params, grads, state):
    """Bias-corrected Adam update, applied in place; returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state have different lengths")
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"shape mismatch in Adam step: {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    seed: int = 0
    lr: float = 2e-4
    precision: str = "f32"
    deterministic: bool = True
    workers: int = 1
    eval_batch_size: int = 500

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float = float("nan")
    seconds: float = 0.0


def train_epoch(model, optimizer, images, labels, config, epoch):
    """One shuffled pass. Returns ``(mean train loss, train accuracy)``."""
    if len(images) == 0:
        raise DimensionError("empty training set")
    plan = BatchPlan.shuffled(len(images), config.batch_size, stream(config.seed, "shuffle", epoch))
    params = model.flat_params()
    total_loss = 0.0
    correct = 0
    for index, batch in enumerate(plan.batches()):
        try:
            loss, logits, grads = model.loss_and_grads(images[batch], labels[batch], config.workers)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, batch {index}: {exc}") from exc
        adam_step(params, [g for gs in grads for g in gs], optimizer)
        total_loss += loss * len(batch)
        correct += int((np.argmax(logits, axis=1) == labels[batch]).sum())
    return total_loss / len(images), correct / len(images)


def evaluate(model, images, labels, batch_size=500):
    """``(accuracy, mean loss)``; argmax ties go to the lowest class index."""
    if len(images) == 0:
        raise DimensionError("empty evaluation set")
    logits = model.logits(images, batch_size)
    losses, _ = cross_entropy_batch(logits, labels)
    return float((np.argmax(logits, axis=1) == labels).mean()), float(losses.mean())


def best_epoch_selection(history):
    """Highest test accuracy and the earliest (1-based) epoch reaching it."""
    if not history:
        raise SummaryError("empty training history")
    best = max(history, key=lambda m: (m.test_acc, -m.epoch))
    return best.test_acc, best.epoch


def multi_seed_summary(values):
    """Mean and sample standard deviation (n - 1 divisor)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise SummaryError(f"need at least 2 seeds for a summary, got {values.size}")
    return float(values.mean()), float(values.std(ddof=1))


def _row(m, deterministic):
    # wall time is the only run-to-run varying field; omitted in deterministic mode
    seconds = "" if deterministic else f"{m.seconds:.3f}"
    return [m.epoch, f"{m.train_loss:.8f}", f"{m.train_acc:.6f}", f"{m.test_acc:.6f}", seconds]


@dataclass
class RunResult:
    history: list = field(default_factory=list)
    best_acc: float = float("nan")
    best_epoch: int = 0


def fit(model, optimizer, train, test, config, out_dir=None, log=None):
    """Train for ``config.epochs`` epochs, evaluating on ``test`` after each.

    When ``out_dir`` is given, writes ``metrics.csv`` row by row plus
    ``best.ckpt`` (refreshed whenever test accuracy improves) and ``final.ckpt``.
    """
    if config.epochs < 1:
        raise SummaryError("epochs must be >= 1; an empty history has no best epoch")
    result = RunResult()
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
    try:
        for epoch in range(1, config.epochs + 1):
            start = time.perf_counter()
            loss, acc = train_epoch(model, optimizer, train[0], train[1], config, epoch)
            test_acc, _ = evaluate(model, test[0], test[1], config.eval_batch_size)
            m = EpochMetrics(epoch, loss, acc, test_acc, time.perf_counter() - start)
            result.history.append(m)
            if writer is not None:
                writer.writerow(_row(m, config.deterministic))
                fh.flush()
                if test_acc > result.best_acc or result.best_epoch == 0:
                    save_checkpoint(out_dir / "best.ckpt", model)
            if test_acc > result.best_acc or result.best_epoch == 0:
                result.best_acc, result.best_epoch = test_acc, epoch
            if log:
                log(
                    f"epoch {epoch:4d}  loss {loss:.4f}  train {acc:.4f}  "
                    f"test {test_acc:.4f}  ({m.seconds:.1f}s)"
                )
        if out_dir is not None:
            save_checkpoint(out_dir / "final.ckpt", model)
    finally:
        if writer is not None:
            fh.close()
    return result
