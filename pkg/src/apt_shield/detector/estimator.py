"""scikit-learn style wrappers around the residual network.

Inputs are either n x d feature matrices, which are windowed internally, or
pre-windowed ``(n, d, width)`` arrays.  Labels follow the dataset convention
1 = normal, 0 = attack, so ``predict_proba(X)[:, 0]`` is the attack
probability.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import GridSearchCV, StratifiedKFold, train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

from .network import DESK_FILTERS, ModelConfig, ResNet1D
from .preprocessing import make_windows
from .training import train, write_history


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    def _windows(self, X, fitting: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64) if not hasattr(X, "to_numpy") else X.to_numpy(
            dtype=np.float64)
        if X.ndim == 3:
            W = check_array(X, allow_nd=True, dtype=np.float64)
        else:
            X = check_array(X, dtype=np.float64)
            W = make_windows(X, self.window, self.window_mode)
        if fitting:
            self.n_features_in_ = W.shape[1]
        elif W.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {W.shape[1]}")
        return W

    def _labels(self, y) -> np.ndarray:
        y = np.asarray(y).ravel()
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 (attack) or 1 (normal)")
        if len(np.unique(y)) < 2:
            raise ValueError("training data holds a single class")
        self.classes_ = np.array([0, 1])
        return y.astype(np.int64)

    def _split(self, W, y):
        if not self.validation_fraction:
            return W, y, None, None
        Wt, Wv, yt, yv = train_test_split(W, y, test_size=self.validation_fraction,
                                          random_state=self.random_state, stratify=y)
        return Wt, yt, Wv, yv

    def _fit_model(self, W, y):
        Wt, yt, Wv, yv = self._split(W, y)
        self.history_ = train(self.model_, Wt, yt, Wv, yv, epochs=self.epochs,
                              batch_size=self.batch_size, lr=self.learning_rate,
                              patience=self.patience, seed=self.random_state)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(self._windows(X))

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    @property
    def best_val_accuracy_(self) -> Optional[float]:
        check_is_fitted(self, "history_")
        return max((h.val_acc for h in self.history_), default=None)

    def write_history(self, path: Union[str, Path]) -> None:
        check_is_fitted(self, "history_")
        write_history(self.history_, path)

    def save(self, path: Union[str, Path], extra: Optional[dict] = None) -> None:
        check_is_fitted(self, "model_")
        meta = {"window_mode": self.window_mode, **(extra or {})}
        self.model_.save(path, meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> tuple["DTLResNetClassifier", dict]:
        """Rebuild a fitted classifier; also returns the stored extra metadata."""
        model, extra = ResNet1D.load(path)
        cfg = model.config
        clf = DTLResNetClassifier(filters=cfg.filters, kernels=cfg.kernels,
                                  residual=cfg.residual, window=cfg.width,
                                  window_mode=extra.get("window_mode", "pad"))
        clf.model_ = model
        clf.n_features_in_ = cfg.in_channels
        clf.classes_ = np.array([0, 1])
        clf.history_ = []
        return clf, extra


class DTLResNetClassifier(_NetworkClassifier):
    """Residual 1D-conv classifier trained from scratch.

    ``residual=False`` gives the plain-conv baseline with the same layers
    and no shortcuts.  ``validation_fraction`` of the training rows is held
    out (stratified, seeded) for early stopping.
    """

    def __init__(self, filters=DESK_FILTERS, kernels=(8, 5, 3), residual: bool = True,
                 window: int = 16, window_mode: str = "pad", epochs: int = 200,
                 batch_size: int = 32, learning_rate: float = 1e-3, patience: int = 20,
                 validation_fraction: float = 0.2, random_state: int = 0):
        self.filters = filters
        self.kernels = kernels
        self.residual = residual
        self.window = window
        self.window_mode = window_mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        W = self._windows(X, fitting=True)
        y = self._labels(y)
        if len(W) != len(y):
            raise ValueError("X and y lengths differ")
        cfg = ModelConfig(in_channels=W.shape[1], filters=tuple(self.filters),
                          kernels=tuple(self.kernels), residual=self.residual,
                          width=W.shape[2])
        self.model_ = ResNet1D(cfg, seed=self.random_state)
        return self._fit_model(W, y)


class TransferClassifier(_NetworkClassifier):
    """Fine-tune a copy of a fitted source classifier on target data.

    The conv blocks start from the source weights and are frozen, except
    the last ``trainable_blocks`` of them; the head is always trained.
    """

    def __init__(self, source: Optional[_NetworkClassifier] = None,
                 trainable_blocks: int = 0, epochs: int = 200, batch_size: int = 16,
                 learning_rate: float = 1e-3, patience: int = 20,
                 validation_fraction: float = 0.2, random_state: int = 0):
        self.source = source
        self.trainable_blocks = trainable_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    @property
    def window(self) -> int:
        return self.source.window

    @property
    def window_mode(self) -> str:
        return self.source.window_mode

    def fit(self, X, y):
        if self.source is None:
            raise ValueError("a fitted source classifier is required")
        check_is_fitted(self.source, "model_")
        W = self._windows(X, fitting=True)
        if W.shape[1] != self.source.n_features_in_:
            raise ValueError(f"target has {W.shape[1]} features, source model expects "
                             f"{self.source.n_features_in_}")
        y = self._labels(y)
        self.model_ = self.source.model_.copy()
        if not 0 <= self.trainable_blocks <= len(self.model_.blocks):
            raise ValueError("trainable_blocks out of range")
        self.model_.freeze(self.trainable_blocks)
        return self._fit_model(W, y)


def transfer(source: _NetworkClassifier, X, y, **params) -> TransferClassifier:
    return TransferClassifier(source, **params).fit(X, y)


def tune(estimator, X, y, param_grid: dict, k: int = 5, random_state: int = 0,
         scoring: str = "accuracy") -> GridSearchCV:
    """Seeded stratified k-fold grid search over estimator parameters."""
    folds = StratifiedKFold(n_splits=k, shuffle=True, random_state=random_state)
    return GridSearchCV(estimator, param_grid, cv=folds, scoring=scoring,
                        refit=True).fit(X, y)
