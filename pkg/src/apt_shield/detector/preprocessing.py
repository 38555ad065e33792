"""Tabular preprocessing: temporal-column removal, min-max scaling, Pearson
correlation and reshaping rows into conv windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

TEMPORAL_COLUMNS = frozenset({"date", "time", "ts", "timestamp"})
NORMAL, ATTACK = 1, 0


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-column (x - min) / (max - min); constant columns map to 0.

    Values outside the fitted range are clipped to [0, 1] when ``clip`` is
    set, which is the default so unseen data keeps the [0, 1] bound.
    """

    def __init__(self, clip: bool = True):
        self.clip = clip

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.data_min_) / safe, 0.0)
        if self.clip:
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def to_dict(self) -> dict:
        return {"min": self.data_min_.tolist(), "max": self.data_max_.tolist(),
                "clip": self.clip}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxNormalizer":
        n = cls(clip=d.get("clip", True))
        n.data_min_ = np.asarray(d["min"], dtype=np.float64)
        n.data_max_ = np.asarray(d["max"], dtype=np.float64)
        n.n_features_in_ = len(n.data_min_)
        return n


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str]
    domain_tag: str = "source"
    normalizer: Optional[MinMaxNormalizer] = field(default=None, repr=False)

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be n x d with one label per row")
        if len(self.feature_names) != self.features.shape[1]:
            raise ValueError("one feature name per column")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 (attack) or 1 (normal)")
        if self.domain_tag not in ("source", "target"):
            raise ValueError("domain_tag must be 'source' or 'target'")

    def __len__(self) -> int:
        return len(self.labels)


def read_table(source: Union[str, Path, pd.DataFrame]) -> pd.DataFrame:
    if isinstance(source, pd.DataFrame):
        return source
    return pd.read_csv(source)


def preprocess(source: Union[str, Path, pd.DataFrame], label_column: str = "label", *,
               normalizer: Optional[MinMaxNormalizer] = None,
               domain_tag: str = "source") -> Dataset:
    """Drop temporal columns, check types and min-max scale the features.

    Pass an already fitted ``normalizer`` to scale evaluation data with the
    training ranges; otherwise one is fitted on this table.
    """
    df = read_table(source)
    if label_column not in df.columns:
        raise ValueError(f"label column {label_column!r} is missing")
    labels = df[label_column]
    if labels.isna().any():
        raise ValueError(f"missing label in row {int(np.flatnonzero(labels.isna())[0])}")
    labels = pd.to_numeric(labels, errors="coerce")
    if labels.isna().any() or not labels.isin((0, 1)).all():
        raise ValueError("label column must hold only 0 and 1")
    keep = [c for c in df.columns
            if c != label_column and str(c).strip().lower() not in TEMPORAL_COLUMNS]
    feats = df[keep]
    for c in keep:
        coerced = pd.to_numeric(feats[c], errors="coerce")
        bad = coerced.isna() & feats[c].notna()
        if bad.any() or coerced.isna().any():
            row = int(np.flatnonzero(coerced.isna())[0])
            raise ValueError(f"non-numeric value {feats[c].iloc[row]!r} in column {c!r}, "
                             f"row {row}")
    X = feats.apply(pd.to_numeric).to_numpy(dtype=np.float64)
    if normalizer is None:
        normalizer = MinMaxNormalizer().fit(X)
    return Dataset(normalizer.transform(X), labels.to_numpy(dtype=np.int64),
                   [str(c) for c in keep], domain_tag, normalizer)


def pearson(features) -> np.ndarray:
    """d x d correlation matrix; entries touching a zero-variance column are NaN."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    Xc = X - X.mean(axis=0)
    ss = np.einsum("ij,ij->j", Xc, Xc)
    defined = ss > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Xc.T @ Xc) / np.sqrt(np.outer(ss, ss))
    r = np.clip(r, -1.0, 1.0)
    r[~defined, :] = np.nan
    r[:, ~defined] = np.nan
    idx = np.flatnonzero(defined)
    r[idx, idx] = 1.0
    return (r + r.T) / 2  # exact symmetry


def make_windows(features, width: int = 16, mode: str = "pad") -> np.ndarray:
    """Reshape n x d rows into conv input (n, d, width).

    ``pad`` puts each row in the first column of a zero window.  ``sliding``
    stacks the ``width`` most recent rows (earlier rows zero-filled), for
    tables whose row order is time order.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n, d = X.shape
    out = np.zeros((n, d, width))
    if mode == "pad":
        out[:, :, 0] = X
    elif mode == "sliding":
        padded = np.vstack([np.zeros((width - 1, d)), X])
        for j in range(width):
            out[:, :, j] = padded[j:j + n]
    else:
        raise ValueError(f"unknown window mode {mode!r}")
    return out
