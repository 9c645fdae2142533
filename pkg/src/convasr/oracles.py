"""Brute-force reference implementations used by the test and verify suites.

Each function here solves its problem by exhaustive enumeration and shares no
code with the production implementation it checks.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

# -- edit distance ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def _pair_sets(n: int, m: int) -> np.ndarray:
    """Incidence matrix (sets x n*m) of every non-crossing set of aligned (i, j) pairs."""
    rows = []
    for k in range(min(n, m) + 1):
        for ii in itertools.combinations(range(n), k):
            for jj in itertools.combinations(range(m), k):
                v = np.zeros(n * m, dtype=np.float32)
                for i, j in zip(ii, jj):
                    v[i * m + j] = 1
                rows.append(v)
    return np.array(rows).reshape(len(rows), n * m)


def exhaustive_edit_costs(refs: np.ndarray, hyps: np.ndarray) -> np.ndarray:
    """Minimum edit cost for every (ref, hyp) pair of equal-length symbol arrays.

    An edit script is determined by which reference and hypothesis positions
    it pairs (match or substitution); unpaired positions are deletions or
    insertions. Enumerating all non-crossing pair sets S gives
    ``cost = n + m - |S| - matches(S)``; the minimum over S is the edit distance.
    ``refs`` is ``R x n`` and ``hyps`` is ``H x m``; returns ``R x H``.
    """
    refs = np.asarray(refs)
    hyps = np.asarray(hyps)
    R, n = refs.shape
    H, m = hyps.shape
    if n == 0 or m == 0:
        return np.full((R, H), n + m, dtype=np.int64)
    P = _pair_sets(n, m)
    size = P.sum(axis=1)
    out = np.empty((R, H), dtype=np.int64)
    for r in range(R):
        eq = (refs[r][:, None] == hyps[:, None, :]).reshape(H, n * m).astype(np.float32)
        value = eq @ P.T + size
        out[r] = n + m - value.max(axis=1).astype(np.int64)
    return out


def all_strings(alphabet: str, max_len: int) -> dict[int, np.ndarray]:
    """Every string over ``alphabet`` grouped by length, as integer arrays."""
    out = {}
    for n in range(max_len + 1):
        rows = list(itertools.product(range(len(alphabet)), repeat=n))
        out[n] = np.array(rows, dtype=np.int64).reshape(len(rows), n)
    return out


def enumerate_edit_scripts(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Literal enumeration of op sequences (m/s, d, i); only for very short inputs."""
    best = math.inf

    def walk(i, j, cost):
        nonlocal best
        if cost >= best:
            return
        if i == len(ref) and j == len(hyp):
            best = cost
            return
        if i < len(ref) and j < len(hyp):
            walk(i + 1, j + 1, cost + (ref[i] != hyp[j]))
        if i < len(ref):
            walk(i + 1, j, cost + 1)
        if j < len(hyp):
            walk(i, j + 1, cost + 1)

    walk(0, 0, 0)
    return int(best)


# -- forced alignment and decoding -------------------------------------------------------

def brute_force_align(log_probs: np.ndarray, states: Sequence[int]) -> np.ndarray | None:
    """Best monotone segmentation; ties go to the lexicographically earliest boundaries."""
    T, N = len(log_probs), len(states)
    if N > T or N == 0:
        return None
    best, best_path = -math.inf, None
    for cuts in itertools.combinations(range(1, T), N - 1):
        bounds = (0,) + cuts + (T,)
        path = np.concatenate([[states[j]] * (bounds[j + 1] - bounds[j]) for j in range(N)])
        score = float(log_probs[np.arange(T), path].sum())
        if score > best:
            best, best_path = score, path
    return best_path


def _segmentation_score(lp: np.ndarray, states: Sequence[int]) -> float:
    path = brute_force_align(lp, states)
    return -math.inf if path is None else float(lp[np.arange(len(lp)), path].sum())


def brute_force_decode(log_probs: np.ndarray, lexicon: Mapping[str, Sequence[int]], log_start: Mapping[str, float],
                       log_trans: Mapping[tuple[str, str], float], log_end: Mapping[str, float],
                       lm_weight: float, penalty: float, use_end: bool = True) -> tuple[list[str], float]:
    """Best word sequence by enumerating every word sequence that fits in ``T`` frames."""
    T = len(log_probs)
    words = sorted(lexicon)
    best: tuple[float, tuple] = (-math.inf, ())
    min_len = min(len(lexicon[w]) for w in words)
    for n in range(1, T // min_len + 1):
        for seq in itertools.product(words, repeat=n):
            states = [s for w in seq for s in lexicon[w]]
            if len(states) > T:
                continue
            ac = _segmentation_score(log_probs, states)
            lm = log_start[seq[0]] + sum(log_trans[a, b] for a, b in zip(seq, seq[1:]))
            if use_end:
                lm += log_end[seq[-1]]
            score = ac + lm_weight * lm - penalty * n
            if score > best[0] or (score == best[0] and seq < best[1]):
                best = (score, seq)
    return list(best[1]), best[0]


# -- clustering -------------------------------------------------------------------------------

def average_mutual_information(assign: Sequence[int], bigrams: Mapping[tuple[int, int], float]) -> float:
    """AMI of the class bigram distribution induced by a word -> class map."""
    total = float(sum(bigrams.values()))
    joint: dict[tuple[int, int], float] = {}
    for (a, b), c in bigrams.items():
        key = (assign[a], assign[b])
        joint[key] = joint.get(key, 0.0) + c
    left: dict[int, float] = {}
    right: dict[int, float] = {}
    for (x, y), c in joint.items():
        left[x] = left.get(x, 0.0) + c
        right[y] = right.get(y, 0.0) + c
    ami = 0.0
    for (x, y), c in joint.items():
        if c > 0:
            ami += c / total * math.log(c * total / (left[x] * right[y]))
    return ami


def exhaustive_best_ami(vocab_size: int, n_classes: int, bigrams: Mapping[tuple[int, int], float]) -> float:
    """Maximum AMI over every assignment of words to at most ``n_classes`` classes."""
    best = -math.inf
    for assign in itertools.product(range(n_classes), repeat=vocab_size):
        # canonical labelling only: first occurrence order 0, 1, 2, ...
        seen: list[int] = []
        ok = True
        for a in assign:
            if a not in seen:
                if a != len(seen):
                    ok = False
                    break
                seen.append(a)
        if ok:
            best = max(best, average_mutual_information(assign, bigrams))
    return best
