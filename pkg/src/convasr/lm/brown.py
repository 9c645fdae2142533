"""Greedy bottom-up Brown clustering on the class-bigram AMI objective."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError


def class_ami(joint: np.ndarray) -> float:
    """Average mutual information of a class-bigram count matrix."""
    total = joint.sum()
    if total <= 0:
        return 0.0
    left = joint.sum(axis=1, keepdims=True)
    right = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    ratio = np.where(nz, joint * total / np.where(nz, left * right, 1.0), 1.0)
    return float((joint[nz] / total * np.log(ratio[nz])).sum())


def _merged(joint: np.ndarray, a: int, b: int) -> np.ndarray:
    """Class ``b`` folded into ``a`` and removed."""
    m = joint.copy()
    m[a, :] += m[b, :]
    m[:, a] += m[:, b]
    return np.delete(np.delete(m, b, axis=0), b, axis=1)


def _class_joint(bigrams: np.ndarray, assign: np.ndarray, n_classes: int) -> np.ndarray:
    onehot = np.zeros((len(assign), n_classes))
    onehot[np.arange(len(assign)), assign] = 1.0
    return onehot.T @ bigrams @ onehot


def exchange(bigrams: np.ndarray, assign: np.ndarray, max_sweeps: int = 50) -> np.ndarray:
    """Move single words between classes while AMI strictly improves.

    Words are visited in id order and targets in class order; a move that
    would empty a class is never taken, so the class count is preserved.
    """
    assign = assign.copy()
    C = int(assign.max()) + 1
    current = class_ami(_class_joint(bigrams, assign, C))
    for _ in range(max_sweeps):
        moved = False
        for w in range(len(assign)):
            home = assign[w]
            if np.count_nonzero(assign == home) == 1:
                continue
            best, target = current, home
            for c in range(C):
                if c == home:
                    continue
                assign[w] = c
                score = class_ami(_class_joint(bigrams, assign, C))
                if score > best + 1e-12:
                    best, target = score, c
            assign[w] = target
            if target != home:
                current, moved = best, True
        if not moved:
            break
    return _relabel(assign)


def _relabel(assign: np.ndarray) -> np.ndarray:
    order = {c: i for i, c in enumerate(dict.fromkeys(assign.tolist()))}
    return np.array([order[c] for c in assign.tolist()], dtype=np.int64)


def brown_from_counts(bigrams: np.ndarray, n_classes: int, refine: bool = True) -> np.ndarray:
    """Cluster ``V`` words given a ``V x V`` bigram count matrix.

    Starts from singletons and repeatedly applies the merge that leaves the
    highest AMI. Classes are kept ordered by their lowest word id and candidate
    pairs are scanned in that order, so exact ties resolve toward the lowest
    ids. With ``refine`` an exchange pass then moves single words between
    classes while that raises AMI. Returns class labels numbered by first
    occurrence.
    """
    bigrams = np.asarray(bigrams, dtype=np.float64)
    V = bigrams.shape[0]
    if n_classes < 1:
        raise ConfigError(f"n_classes must be >= 1, got {n_classes}")
    if n_classes > V:
        raise ConfigError(f"n_classes {n_classes} exceeds vocabulary size {V}")
    members: list[list[int]] = [[w] for w in range(V)]
    joint = bigrams.copy()
    while len(members) > n_classes:
        best, pair = -np.inf, (0, 1)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                score = class_ami(_merged(joint, a, b))
                if score > best + 1e-12:
                    best, pair = score, (a, b)
        a, b = pair
        joint = _merged(joint, a, b)
        members[a] = sorted(members[a] + members[b])
        del members[b]
    assign = np.empty(V, dtype=np.int64)
    for c, ws in enumerate(members):
        assign[ws] = c
    return exchange(bigrams, assign) if refine else assign


def bigram_counts(sentences: Sequence[Sequence[str]], words: Sequence[str]) -> np.ndarray:
    """Adjacent-pair counts inside sentences; words outside ``words`` are skipped."""
    index = {w: i for i, w in enumerate(words)}
    counts = np.zeros((len(words), len(words)))
    for sent in sentences:
        ids = [index.get(w) for w in sent]
        for x, y in zip(ids, ids[1:]):
            if x is not None and y is not None:
                counts[x, y] += 1
    return counts


def brown_cluster(sentences: Sequence[Sequence[str]], n_classes: int,
                  words: Sequence[str] | None = None, refine: bool = True) -> dict[str, int]:
    """Word -> class map; ``words`` defaults to the corpus words in first-seen order."""
    if words is None:
        words = list(dict.fromkeys(w for s in sentences for w in s))
    if not words:
        raise DataError("empty corpus")
    assign = brown_from_counts(bigram_counts(sentences, words), n_classes, refine)
    return {w: int(c) for w, c in zip(words, assign)}
