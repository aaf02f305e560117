"""Mini-batch SGD with per-epoch selection of the best checkpoint.

Plain SGD, nothing adaptive: the experiments compare penalty weights,
and optimizer confounds would muddy that comparison. Each epoch shuffles
the training set with its own deterministic generator, walks it in
batches, and scores the current parameters on a held-out selection set;
the returned model is the checkpoint with the best selection score
(earlier epoch wins ties).

A cell whose loss goes non-finite or past the divergence limit is
reported as diverged instead of raising, so a sweep over aggressive
penalty weights survives its own worst cells.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from regiongrad.nn import ModelParams, predict
from regiongrad.objective import RegionLossConfig, batch_region_loss
from regiongrad.tensor import Tape, Tensor, backward

__all__ = [
    "SgdConfig",
    "EpochRecord",
    "TrainResult",
    "DIVERGENCE_LIMIT",
    "sgd_step",
    "accuracy",
    "train",
    "write_training_log",
]

DIVERGENCE_LIMIT = 1e6

_EVAL_CHUNK = 256  # examples per forward pass when scoring a whole dataset


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 40
    shuffle_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    select_metric: float
    wallclock_seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    log: List[EpochRecord] = field(default_factory=list)
    diverged: bool = False
    best_epoch: int = -1


def sgd_step(params: ModelParams, grads: dict, lr: float) -> ModelParams:
    """One descent step: new params with data - lr * grad, elementwise."""
    updates = {}
    for name, t in params.items():
        g = grads.get(t)
        if g is None:
            raise KeyError(f"no gradient supplied for parameter {name!r}")
        updates[name] = Tensor(t.data - lr * g.data, requires_grad=True)
    return params.replace(updates)


def _stacked(dataset):
    images = np.stack([np.asarray(getattr(e.image, "data", e.image)) for e in dataset])
    labels = np.array([int(e.label) for e in dataset])
    return images, labels


def accuracy(model: ModelParams, dataset) -> float:
    """Fraction of examples whose argmax prediction matches the label."""
    images, labels = _stacked(dataset)
    hits = 0
    for start in range(0, len(labels), _EVAL_CHUNK):
        chunk = images[start : start + _EVAL_CHUNK]
        preds = predict(model, Tensor(chunk))
        hits += int(np.sum(preds == labels[start : start + _EVAL_CHUNK]))
    return hits / len(labels)


def train(
    model: ModelParams,
    train_set,
    cfg: SgdConfig,
    loss_cfg: RegionLossConfig,
    select_set,
    select_metric: Optional[Callable[[ModelParams, object], float]] = None,
) -> TrainResult:
    """Minimize the batch loss by SGD; return the best-scoring checkpoint."""
    train_set = list(train_set)
    select_set = list(select_set)
    if not train_set or not select_set:
        raise ValueError("train and selection sets must be non-empty")
    metric = select_metric if select_metric is not None else accuracy

    params = model.clone()
    rng = np.random.default_rng(cfg.shuffle_seed)
    n = len(train_set)
    log: List[EpochRecord] = []
    best_score = -np.inf
    best_epoch = -1
    best_params = params

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            with Tape() as tape:
                loss = batch_region_loss(params, batch, loss_cfg)
            value = loss.item()
            if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
                return TrainResult(params=best_params, log=log, diverged=True, best_epoch=best_epoch)
            grads = backward(tape, loss)
            params = sgd_step(params, grads, cfg.learning_rate)
            loss_sum += value * len(batch)
        score = metric(params, select_set)
        log.append(EpochRecord(epoch, loss_sum / n, score, time.perf_counter() - t0))
        if score > best_score:
            best_score, best_epoch, best_params = score, epoch, params
    return TrainResult(params=best_params, log=log, diverged=False, best_epoch=best_epoch)


def write_training_log(log, path) -> None:
    """Per-epoch CSV: epoch, train_loss, select_metric, wallclock_seconds."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,select_metric,wallclock_seconds\n")
        for rec in log:
            f.write(
                f"{rec.epoch},{float(rec.train_loss)!r},{float(rec.select_metric)!r},{rec.wallclock_seconds:.6f}\n"
            )
