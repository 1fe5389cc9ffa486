"""k-nearest-neighbour classification of flattened spectrograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KnnModel:
    k: int
    vectors: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def knn_fit(spectrograms, labels, k: int = 5) -> KnnModel:
    """Store the training spectrograms as flat float64 rows."""
    x = np.asarray(spectrograms, dtype=np.float64)
    y = np.asarray(labels, dtype=int).reshape(-1)
    if len(x) == 0:
        raise ValueError("cannot fit on an empty training set")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} vectors for {len(y)} labels")
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(x):
        raise ValueError(f"k={k} exceeds the {len(x)} training items")
    return KnnModel(k, x.reshape(len(x), -1).copy(), y.copy())


def _vote(labels: np.ndarray, dist: np.ndarray) -> int:
    """Majority label; ties go to the smaller summed distance, then the lower label."""
    best = None
    for c in np.unique(labels):
        sel = labels == c
        key = (-int(sel.sum()), float(dist[sel].sum()), int(c))
        if best is None or key < best:
            best = key
    return best[2]


def knn_predict_batch(model: KnnModel, queries) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
    if q.shape[1] != model.vectors.shape[1]:
        raise ValueError(f"query has {q.shape[1]} features, model has {model.vectors.shape[1]}")
    out = np.empty(len(q), dtype=int)
    for i, row in enumerate(q):
        # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion, so equal vectors tie exactly
        diff = model.vectors - row
        d2 = np.einsum("ij,ij->i", diff, diff)
        # stable sort: equal distances keep training order, lowest index first
        order = np.argsort(d2, kind="stable")[: model.k]
        out[i] = _vote(model.labels[order], np.sqrt(d2[order]))
    return out


def knn_predict(model: KnnModel, spectrogram) -> int:
    return int(knn_predict_batch(model, np.asarray(spectrogram)[None])[0])
