"""Mini-batch Adam training with early stopping on validation accuracy."""

from __future__ import annotations

import csv
import logging
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .layers import Adam, cross_entropy
from .network import ResNet1D

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    train_loss: float
    val_loss: float


def write_history(history: list[EpochRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(EpochRecord)])
        for rec in history:
            w.writerow(astuple(rec))


def _score(model: ResNet1D, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = np.concatenate([model.forward(X[i:i + 512]) for i in range(0, len(X), 512)])
    loss, _ = cross_entropy(logits, y)
    return float((logits.argmax(axis=1) == y).mean()), loss


def train(model: ResNet1D, X_train: np.ndarray, y_train: np.ndarray,
          X_val: Optional[np.ndarray] = None, y_val: Optional[np.ndarray] = None, *,
          epochs: int = 200, batch_size: int = 32, lr: float = 1e-3, patience: int = 20,
          seed: int = 0) -> list[EpochRecord]:
    """Train ``model`` in place and return the per-epoch history.

    With a validation set, training stops once validation accuracy has not
    improved for ``patience`` epochs and the best weights are restored.
    Labels are class indices.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if len(np.unique(y_train)) < 2:
        raise ValueError("training data holds a single class")
    history: list[EpochRecord] = []
    if epochs == 0:
        return history
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    has_val = X_val is not None and len(X_val) > 0
    best_acc, best_state, stale = -1.0, None, 0
    n = len(X_train)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2 and n >= 2:
                continue  # batch statistics need more than one sample
            logits = model.forward(X_train[idx], training=True)
            _, grad = cross_entropy(logits, y_train[idx])
            model.backward(grad)
            opt.step(model.trainable_pairs())
        tr_acc, tr_loss = _score(model, X_train, y_train)
        va_acc, va_loss = _score(model, X_val, y_val) if has_val else (tr_acc, tr_loss)
        history.append(EpochRecord(epoch, tr_acc, va_acc, tr_loss, va_loss))
        log.debug("epoch %d train_acc=%.4f val_acc=%.4f", epoch, tr_acc, va_acc)
        if va_acc > best_acc:
            best_acc, best_state, stale = va_acc, model.state(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    return history
