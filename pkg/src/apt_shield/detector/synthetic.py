"""Seeded synthetic datasets for tests, demos and the transfer experiment."""

from __future__ import annotations

from typing import Optional

import numpy as np
import pandas as pd


def make_separable(n: int = 2000, d: int = 8, margin: float = 0.05,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Rows in [0,1]^d labelled by a random hyperplane through the centre.

    Points closer than ``margin`` to the plane are redrawn, so a linear
    boundary classifies every row correctly.  Classes come out roughly
    balanced.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    rows = []
    total = 0
    while total < n:
        X = rng.uniform(size=(2 * n, d))
        X = X[np.abs((X - 0.5) @ w) > margin]
        rows.append(X)
        total += len(X)
    X = np.vstack(rows)[:n]
    y = ((X - 0.5) @ w > 0).astype(np.int64)
    return X, y


def make_domain(n: int, d: int = 8, shift: float = 0.0, separation: float = 1.0,
                noise: float = 0.5, task_seed: int = 0,
                seed: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian classes around a task-fixed mean; ``shift`` moves every
    feature of both classes, which is the covariate shift between domains.

    Domains sharing ``task_seed`` share the class geometry; ``seed`` draws
    the rows.  Label 1 is normal, 0 is attack.
    """
    task = np.random.default_rng(task_seed)
    centre = task.uniform(0.3, 0.7, size=d)
    direction = task.normal(size=d)
    direction /= np.linalg.norm(direction)
    scale = task.uniform(0.5, 1.5, size=d)
    rng = np.random.default_rng(task_seed + 1 if seed is None else seed)
    y = rng.permutation(np.arange(n) % 2).astype(np.int64)
    offset = np.where(y[:, None] == 0, separation / 2, -separation / 2) * direction
    X = centre + offset * 0.25 + rng.normal(scale=noise * 0.25, size=(n, d)) * scale
    return X + shift, y


def to_frame(X: np.ndarray, y: np.ndarray, with_timestamp: bool = False) -> pd.DataFrame:
    df = pd.DataFrame(X, columns=[f"f{i}" for i in range(X.shape[1])])
    if with_timestamp:
        df.insert(0, "timestamp", np.arange(len(df)))
    df["label"] = y
    return df
