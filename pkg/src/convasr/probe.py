"""Linear probes: how much label information is linearly readable from features."""
from __future__ import annotations

import numpy as np


def linear_probe_accuracy(features: np.ndarray, labels, seed: int = 0, train_fraction: float = 0.5,
                          ridge: float = 1e-2) -> float:
    """Held-out accuracy of a ridge-regression one-vs-rest classifier.

    Rows are shuffled with ``seed``, the first ``train_fraction`` fit the
    probe, the rest are scored.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    classes, yi = np.unique(y, return_inverse=True)
    order = np.random.default_rng(seed).permutation(len(X))
    X, yi = X[order], yi[order]
    n_train = int(round(train_fraction * len(X)))
    mu, sd = X[:n_train].mean(0), X[:n_train].std(0) + 1e-8
    Z = np.hstack([(X - mu) / sd, np.ones((len(X), 1))])
    targets = np.eye(len(classes))[yi[:n_train]]
    A = Z[:n_train]
    W = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ targets)
    pred = (Z[n_train:] @ W).argmax(axis=1)
    return float((pred == yi[n_train:]).mean())
