"""Exhaustive k-nearest-neighbours classifier over standardized features.

Ties are resolved deterministically at two levels:

* neighbours: equal distances at the k-th position go to the lower training index;
* classes: equal vote counts go to the class with the nearer nearest member,
  then to the lower class index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import LabeledDataset
from .features import Scaler, fit_scaler

_CHUNK = 512


@dataclass(frozen=True)
class KnnConfig:
    k: int = 9
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.metric != "euclidean":
            raise ValueError(f"unsupported metric {self.metric!r}")

    def describe(self) -> dict:
        return {"kind": "knn", "k": self.k, "metric": self.metric}


@dataclass(frozen=True)
class KnnModel:
    config: KnnConfig
    scaler: Scaler
    train_vectors: np.ndarray    # scaled
    train_labels: np.ndarray
    class_names: tuple[str, ...]
    meta: dict = field(default_factory=dict, compare=False)

    kind = "knn"

    def __post_init__(self):
        if len(self.train_vectors) != len(self.train_labels):
            raise ValueError("training rows and labels differ in length")
        if len(self.train_labels) < self.config.k:
            raise ValueError(f"model holds {len(self.train_labels)} rows, fewer than k={self.config.k}")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def predict_batch(self, vectors) -> tuple[np.ndarray, np.ndarray]:
        return predict_batch(self, vectors)

    def describe(self) -> dict:
        return {**self.config.describe(), "train_size": int(len(self.train_labels))}


def fit(train: LabeledDataset, config: KnnConfig = KnnConfig()) -> KnnModel:
    if len(train) < config.k:
        raise ValueError(f"training set has {len(train)} samples, fewer than k={config.k}")
    scaler = fit_scaler(train.vectors)
    return KnnModel(config, scaler, scaler.transform(train.vectors), train.labels.copy(), train.class_names)


def _neighbours(d2: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest columns per row, ordered by (distance, index)."""
    q, n = d2.shape
    if k == n:
        cand = np.broadcast_to(np.arange(n), (q, n)).copy()
    else:
        cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
        kth = d2[np.arange(q)[:, None], cand].max(axis=1)
        n_within = (d2 <= kth[:, None]).sum(axis=1)
        # more than k rows tie at the k-th distance: argpartition's pick is arbitrary
        for r in np.flatnonzero(n_within > k):
            within = np.flatnonzero(d2[r] <= kth[r])
            order = np.lexsort((within, d2[r, within]))
            cand[r] = within[order[:k]]
    rows = np.arange(q)[:, None]
    order = np.lexsort((cand, d2[rows, cand]), axis=1)
    return cand[rows, order]


def predict_batch(model: KnnModel, vectors) -> tuple[np.ndarray, np.ndarray]:
    """Predict class indices and vote fractions (denominator k) for raw feature rows."""
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if x.shape[1] != model.scaler.dim:
        raise ValueError(f"dimension mismatch: model expects {model.scaler.dim}, got {x.shape[1]}")
    z = model.scaler.transform(x)
    k, c = model.config.k, model.n_classes
    preds = np.empty(len(z), dtype=np.int64)
    fractions = np.empty((len(z), c))
    for start in range(0, len(z), _CHUNK):
        block = z[start:start + _CHUNK]
        d2 = cdist(block, model.train_vectors, metric="sqeuclidean")
        nb = _neighbours(d2, k)
        rows = np.arange(len(block))[:, None]
        nb_labels = model.train_labels[nb]
        nb_dist = d2[rows, nb]
        counts = np.zeros((len(block), c), dtype=np.int64)
        np.add.at(counts, (np.broadcast_to(rows, nb.shape), nb_labels), 1)
        nearest = np.full((len(block), c), np.inf)
        np.minimum.at(nearest, (np.broadcast_to(rows, nb.shape), nb_labels), nb_dist)
        tied = counts == counts.max(axis=1, keepdims=True)
        # argmin returns the first minimum -> lower class index wins exact ties
        preds[start:start + len(block)] = np.argmin(np.where(tied, nearest, np.inf), axis=1)
        fractions[start:start + len(block)] = counts / k
    return preds, fractions


def predict(model: KnnModel, v) -> tuple[int, np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("predict expects a single feature vector")
    preds, fractions = predict_batch(model, v[None, :])
    return int(preds[0]), fractions[0]
