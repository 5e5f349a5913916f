"""Frozen-feature evaluation: multinomial logistic-regression probe and cosine kNN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import STREAM_SPLIT, derive_rng
from .errors import DegenerateSplit
from .numerics import as_matrix, cosine_matrix, softmax


@dataclass
class ProbeReport:
    train_accuracy: float
    val_accuracy: float
    epochs: int
    final_loss: float


def make_split(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random train/val split; both parts sorted ascending."""
    if not 0 < val_fraction < 1:
        raise DegenerateSplit("val_fraction must be in (0, 1)")
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise DegenerateSplit(f"cannot split {n} rows with fraction {val_fraction}")
    perm = derive_rng(seed, STREAM_SPLIT).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _check_split(n: int, split) -> tuple[np.ndarray, np.ndarray]:
    train, val = (np.asarray(s, dtype=np.int64) for s in split)
    if train.size == 0 or val.size == 0:
        raise DegenerateSplit("empty split")
    if np.unique(train).size != train.size or np.unique(val).size != val.size:
        raise DegenerateSplit("repeated indices in split")
    if np.intersect1d(train, val).size:
        raise DegenerateSplit("train and val overlap")
    if min(train.min(), val.min()) < 0 or max(train.max(), val.max()) >= n:
        raise DegenerateSplit("split index out of range")
    return train, val


def train_linear_probe(features, labels, split, epochs: int = 500, lr: float = 0.1
                       ) -> ProbeReport:
    """Softmax regression by full-batch gradient descent on standardized features.

    Standardization statistics and the class count come from the train rows
    only; validation labels are read solely for scoring.
    """
    x = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.int64)
    train, val = _check_split(x.shape[0], split)
    y_train = labels[train]
    if np.unique(y_train).size < 2:
        raise DegenerateSplit("need at least 2 classes in the train split")

    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    classes = int(y_train.max()) + 1
    onehot = np.eye(classes)[y_train]
    xt = z[train]
    w = np.zeros((x.shape[1], classes))
    b = np.zeros(classes)
    loss = float("nan")
    for _ in range(epochs):
        p = softmax(xt @ w + b)
        loss = float(-np.mean(np.log(np.maximum(p[np.arange(len(train)), y_train], 1e-12))))
        g = (p - onehot) / len(train)
        w -= lr * (xt.T @ g)
        b -= lr * g.sum(axis=0)

    def accuracy(idx):
        return float(np.mean(np.argmax(z[idx] @ w + b, axis=1) == labels[idx]))

    return ProbeReport(accuracy(train), accuracy(val), epochs, loss)


def knn_eval(features, labels, split, k_eval: int = 20) -> float:
    """Cosine k-NN majority vote from train rows onto val rows (ties to the lower label)."""
    x = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.int64)
    train, val = _check_split(x.shape[0], split)
    if not 1 <= k_eval <= train.size:
        raise DegenerateSplit(f"k_eval={k_eval} must be in [1, {train.size}]")
    sim = cosine_matrix(x[val], x[train])
    nearest = np.argsort(-sim, axis=1, kind="stable")[:, :k_eval]
    votes = labels[train][nearest]
    classes = int(labels[train].max()) + 1
    counts = np.stack([np.bincount(v, minlength=classes) for v in votes])
    return float(np.mean(counts.argmax(axis=1) == labels[val]))
