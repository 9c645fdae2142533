"""Linear mixtures of language models with EM-tuned weights."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ConsistencyError, DegenerateError
from .base import LmScorer, token_probs


def _check_weights(weights: Sequence[float], n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or not np.isfinite(w).all() or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"need {n} nonnegative weights summing to 1, got {list(weights)}")
    return w


class InterpolatedLM(LmScorer):
    """``p(w|h) = sum_i w_i p_i(w|h)``; all components must share one vocabulary."""

    kind = "interpolated"

    def __init__(self, scorers: Sequence[LmScorer], weights: Sequence[float]):
        if not scorers:
            raise ConfigError("no component models")
        words = scorers[0].vocab.words
        for s in scorers[1:]:
            if s.vocab.words != words:
                raise ConfigError("component models use different vocabularies")
            if s.predicts_end != scorers[0].predicts_end:
                raise ConfigError("components disagree on sentence-end modelling")
        self.scorers = list(scorers)
        self.weights = _check_weights(weights, len(scorers))
        self.vocab = scorers[0].vocab
        self.predicts_end = scorers[0].predicts_end

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        return sum(w * s.distribution(history) for w, s in zip(self.weights, self.scorers))

    def token_log_probs(self, words: Sequence[str]) -> np.ndarray:
        probs = np.stack([np.exp(s.token_log_probs(words)) for s in self.scorers])
        with np.errstate(divide="ignore"):
            return np.log(self.weights @ probs)


def event_probs(scorers: Sequence[LmScorer], sentences: Sequence[Sequence[str]]) -> np.ndarray:
    """``K x N`` matrix of each model's probability for each heldout event."""
    return np.stack([token_probs(s, sentences) for s in scorers])


@dataclass
class InterpolationWeights:
    weights: tuple[float, ...]
    log_likelihoods: list[float] = field(default_factory=list)   # per EM iteration, starting point first
    names: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps({"weights": list(self.weights), "names": list(self.names)}, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "InterpolationWeights":
        d = json.loads(Path(path).read_text())
        return cls(tuple(d["weights"]), [], tuple(d.get("names", ())))


def em_weights(P: np.ndarray, max_iter: int = 10000, tol: float = 1e-13) -> InterpolationWeights:
    """EM for mixture weights given per-event component probabilities ``P`` (``K x N``).

    Each iteration sets ``w_i`` to the mean posterior responsibility of
    component ``i``; the mixture log-likelihood is concave in ``w`` and never
    decreases, which is asserted at every step.
    """
    P = np.asarray(P, dtype=np.float64)
    K, N = P.shape
    if K < 2:
        raise ConfigError("interpolation needs at least two models")
    if N == 0:
        raise DegenerateError("no heldout events")
    dead = [i for i in range(K) if not np.any(P[i] > 0)]
    if dead:
        raise DegenerateError(f"model(s) {dead} assign zero probability to every heldout event")
    if np.any(P.sum(axis=0) <= 0):
        raise DegenerateError("some heldout event has zero probability under every model")
    w = np.full(K, 1.0 / K)
    mix = w @ P
    history = [float(np.log(mix).sum())]
    for _ in range(max_iter):
        w = (w[:, None] * P / mix).mean(axis=1)
        w /= w.sum()
        mix = w @ P
        ll = float(np.log(mix).sum())
        if ll < history[-1] - 1e-9 * max(1.0, abs(history[-1])):
            raise ConsistencyError(f"EM log-likelihood decreased: {history[-1]} -> {ll}")
        history.append(ll)
        if ll - history[-2] <= tol * max(1.0, abs(ll)):
            break
    return InterpolationWeights(tuple(float(x) for x in w), history)


def tune_interpolation(scorers: Sequence[LmScorer], heldout: Sequence[Sequence[str]],
                       max_iter: int = 10000) -> InterpolationWeights:
    result = em_weights(event_probs(scorers, heldout), max_iter)
    result.names = tuple(s.kind for s in scorers)
    return result


def mixture_perplexity(P: np.ndarray, weights: Sequence[float]) -> float:
    mix = np.asarray(weights) @ P
    with np.errstate(divide="ignore"):
        return float(math.exp(-np.log(mix).mean()))
