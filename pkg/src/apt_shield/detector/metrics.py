"""Classification metrics with attack (label 0) as the positive class, and
the maximum mean discrepancy between two domains."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

ATTACK = 0


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    roc_auc: Optional[float]  # None when only one class is present

    def to_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        auc = "undefined" if self.roc_auc is None else f"{self.roc_auc:.4f}"
        return (f"accuracy={self.accuracy:.4f} precision={self.precision:.4f} "
                f"recall={self.recall:.4f} f1={self.f1:.4f} roc_auc={auc}")


def roc_auc(is_positive, score) -> Optional[float]:
    """Mann-Whitney form of the ROC AUC with tie-averaged ranks."""
    pos = np.asarray(is_positive, dtype=bool)
    score = np.asarray(score, dtype=np.float64)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(score)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_metrics(y_true, y_pred, attack_score=None) -> Metrics:
    """``attack_score`` is the predicted probability of the attack class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0 or len(y_true) != len(y_pred):
        raise ValueError("need equally long, non-empty label arrays")
    actual = y_true == ATTACK
    predicted = y_pred == ATTACK
    tp = int((actual & predicted).sum())
    fp = int((~actual & predicted).sum())
    fn = int((actual & ~predicted).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = None
    if attack_score is not None:
        auc = roc_auc(actual, attack_score)
    return Metrics(float((y_true == y_pred).mean()), precision, recall, f1, auc)


def evaluate(estimator, X, y) -> Metrics:
    """Metrics of a fitted classifier whose ``predict_proba[:, 0]`` is P(attack)."""
    proba = estimator.predict_proba(X)
    pred = estimator.classes_[np.argmax(proba, axis=1)]
    return compute_metrics(y, pred, proba[:, list(estimator.classes_).index(ATTACK)])


def mmd(Xs, Xt, kernel: str = "linear", gamma: Optional[float] = None) -> float:
    """Squared distance between the domains' mean embeddings.

    ``linear`` uses the raw features as the embedding.  ``rbf`` gives the
    biased kernel estimate with exp(-gamma * |a - b|^2), gamma defaulting to
    1 / d.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
    Xt = np.atleast_2d(np.asarray(Xt, dtype=np.float64))
    if Xs.shape[1] != Xt.shape[1]:
        raise ValueError(f"feature dimensions differ: {Xs.shape[1]} vs {Xt.shape[1]}")
    if len(Xs) == 0 or len(Xt) == 0:
        raise ValueError("both samples must be non-empty")
    if kernel == "linear":
        diff = Xs.mean(axis=0) - Xt.mean(axis=0)
        return float(diff @ diff)
    if kernel == "rbf":
        g = 1.0 / Xs.shape[1] if gamma is None else gamma

        def k(a, b):
            sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2 * a @ b.T
            return np.exp(-g * np.maximum(sq, 0.0)).mean()

        return float(max(k(Xs, Xs) + k(Xt, Xt) - 2 * k(Xs, Xt), 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")
