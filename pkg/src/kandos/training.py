"""Binary cross-entropy, Adam and the mini-batch training loop."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from kandos.errors import ConfigError, DataError, NonFiniteError, ShapeError
from kandos.model import KanModel, backward, forward, logits, sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    max_epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    eval_every: int = 1
    patience: Optional[int] = None  # early stopping on test loss; off by default

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    seconds: float


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    COLUMNS = ("epoch", "train_loss", "test_loss", "train_acc", "test_acc", "seconds")

    def to_tsv(self, include_timing: bool = True) -> str:
        cols = self.COLUMNS if include_timing else self.COLUMNS[:-1]
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            row = [r.epoch, repr(r.train_loss), repr(r.test_loss), repr(r.train_acc), repr(r.test_acc)]
            if include_timing:
                row.append(f"{r.seconds:.4f}")
            w.writerow(row)
        return buf.getvalue()


def bce_loss(logit, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy from raw logits and its gradient w.r.t. each logit.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large |z| stays finite.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise ShapeError(f"logits {z.shape} and labels {y.shape} must be equal-length vectors")
    n = z.shape[0]
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(losses.mean()), (sigmoid(z) - y) / n


def adam_step(params: list, grads: list, state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        p[...] = p.astype(np.float64) - update
    return state


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def train_epoch(model: KanModel, train_set, state: AdamState, config: TrainConfig, epoch: int = 0):
    """One pass over ``train_set`` in shuffled mini-batches; returns running (loss, accuracy)."""
    X, y = train_set.features, train_set.labels
    n = X.shape[0]
    if n == 0:
        raise DataError("training set is empty")
    params = model.parameters()
    order = epoch_order(n, config.shuffle_seed, epoch)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, config.batch_size):
        idx = order[start : start + config.batch_size]
        z, cache = forward(model, X[idx])
        loss, dz = bce_loss(z, y[idx])
        grads = backward(model, cache, dz)
        adam_step(params, grads.flat(), state, config)
        total_loss += loss * len(idx)
        correct += int(np.sum((z >= 0) == (y[idx] == 1)))
    return total_loss / n, correct / n


def evaluate_loss(model: KanModel, ds) -> tuple[float, float]:
    """Full-set (loss, accuracy at the 0.5 probability cut)."""
    z = logits(model, ds.features)
    loss, _ = bce_loss(z, ds.labels)
    return loss, float(np.mean((z >= 0) == (ds.labels == 1)))


def fit(model: KanModel, train_set, test_set, config: TrainConfig, callback=None):
    """Train for ``max_epochs`` and return the final-epoch model with its history.

    History rows are post-epoch evaluations of the full train and test sets.
    The model is updated in place and also returned.
    """
    config.validate()
    if train_set.n_features != model.in_dim or test_set.n_features != model.in_dim:
        raise ShapeError(f"datasets must have {model.in_dim} features")
    history = TrainingHistory()
    state = AdamState.for_params(model.parameters())
    best, stale = np.inf, 0
    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        train_epoch(model, train_set, state, config, epoch)
        if (epoch + 1) % config.eval_every and epoch + 1 != config.max_epochs:
            continue
        tr_loss, tr_acc = evaluate_loss(model, train_set)
        te_loss, te_acc = evaluate_loss(model, test_set)
        rec = EpochRecord(epoch + 1, tr_loss, te_loss, tr_acc, te_acc, time.perf_counter() - t0)
        history.records.append(rec)
        log.info(
            "epoch %d train_loss %.5f test_loss %.5f train_acc %.4f test_acc %.4f",
            rec.epoch, tr_loss, te_loss, tr_acc, te_acc,
        )
        if callback is not None:
            callback(rec)
        if config.patience is not None:
            if te_loss < best:
                best, stale = te_loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return model, history
