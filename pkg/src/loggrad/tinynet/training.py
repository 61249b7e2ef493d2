"""Mini-batch training loop, evaluation, and training history."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import ModelSpec, backward, forward
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

# activations per micro-batch chunk; bounds peak memory, not the math
CHUNK_ELEMENTS = 3_000_000


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss: str = "xent"                 # or "mse"
    keep: str = "best"                 # or "last": return the final-epoch weights

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (self.lr > 0 and self.eps > 0):
            raise ValueError("learning rate and eps must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.loss not in ("xent", "mse"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.keep not in ("best", "last"):
            raise ValueError(f"keep must be 'best' or 'last', got {self.keep!r}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    initial_train_loss: float = math.nan
    best_epoch: int = -1
    test_acc: float = math.nan
    test_loss: float = math.nan

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), 1):
                w.writerow([i, *(repr(float(v)) for v in row)])


def _chunk_size(spec: ModelSpec) -> int:
    widest = max(int(np.prod(s)) for s in spec.shapes())
    return max(1, CHUNK_ELEMENTS // widest)


def _loss_fn(loss: str):
    return L.softmax_xent if loss == "xent" else L.mse_loss


def predict(spec: ModelSpec, params, x) -> np.ndarray:
    step = _chunk_size(spec)
    return np.concatenate([forward(spec, params, x[i:i + step])[0]
                           for i in range(0, len(x), step)])


def loss_and_accuracy(spec: ModelSpec, params, x, y, loss: str | None = None):
    loss = loss or ("xent" if spec.task == "classify" else "mse")
    out = predict(spec, params, x)
    value, _ = _loss_fn(loss)(out, y)
    acc = float(np.mean(out.argmax(axis=1) == y)) if spec.task == "classify" else math.nan
    return value, acc


def evaluate(spec: ModelSpec, params, x, y) -> float:
    """Accuracy for classifiers, mean squared error for reconstruction."""
    value, acc = loss_and_accuracy(spec, params, x, y)
    return acc if spec.task == "classify" else value


def _batch_grads(spec, params, xb, yb, loss_fn):
    """Loss and gradients of the batch mean, accumulated chunk by chunk."""
    n = len(xb)
    step = _chunk_size(spec)
    total = 0.0
    grads = None
    for i in range(0, n, step):
        xc, yc = xb[i:i + step], yb[i:i + step]
        out, caches = forward(spec, params, xc)
        value, g_out = loss_fn(out, yc)
        weight = len(xc) / n
        g = backward(spec, params, caches, g_out * weight)
        total += value * weight
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    return total, grads


def train(spec: ModelSpec, params, train_data, val_data, test_data=None,
          cfg: TrainConfig = TrainConfig(), progress=None):
    """Train with Adam and per-epoch LR decay; return the best-on-validation model.

    Classification keeps the epoch with the highest validation accuracy,
    reconstruction the one with the lowest validation loss (first wins
    on ties).  With ``cfg.keep == "last"`` the final weights are returned
    instead.  Deterministic for a fixed seed.
    """
    x_tr, y_tr = train_data
    x_va, y_va = val_data
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation data must be nonempty")
    if tuple(x_tr.shape[1:]) != tuple(spec.input_shape):
        raise ValueError(f"input shape {x_tr.shape[1:]} does not match model {spec.input_shape}")
    params = {k: v.copy() for k, v in params.items()}
    loss_fn = _loss_fn(cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros_like(params)
    hist = TrainHistory()
    hist.initial_train_loss = loss_and_accuracy(spec, params, x_tr, y_tr, cfg.loss)[0]
    best, best_score = copy.deepcopy(params), -math.inf
    lr = cfg.lr
    n = len(x_tr)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            value, grads = _batch_grads(spec, params, x_tr[idx], y_tr[idx], loss_fn)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(
                    f"non-finite loss/gradient at epoch {epoch + 1}, batch {b}: "
                    f"loss={value}, lr={lr:.3g}, max|w|="
                    f"{max(float(np.abs(p).max()) for p in params.values()):.3g}")
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            running += value * len(idx)
        hist.train_loss.append(running / n)
        v_loss, v_acc = loss_and_accuracy(spec, params, x_va, y_va, cfg.loss)
        hist.val_loss.append(v_loss)
        hist.val_acc.append(v_acc)
        score = v_acc if spec.task == "classify" else -v_loss
        if score > best_score:
            best_score, hist.best_epoch = score, epoch + 1
            best = {k: v.copy() for k, v in params.items()}
        if progress:
            progress(epoch + 1, hist)
        log.debug("epoch %d: train %.4f val %.4f acc %.4f", epoch + 1,
                  hist.train_loss[-1], v_loss, v_acc)
        lr *= cfg.lr_decay
    if cfg.keep == "last":
        best, hist.best_epoch = params, cfg.epochs
    if test_data is not None:
        hist.test_loss, hist.test_acc = loss_and_accuracy(spec, best, *test_data, cfg.loss)
    return best, hist
