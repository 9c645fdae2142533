"""Scorer interface shared by every language model, plus perplexity."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .vocab import Vocab

KINDS = ("ngram", "word_lstm", "char_lstm", "word_lstm_mtl", "char_lstm_mtl", "word_dcc", "interpolated")


class LmScorer:
    """A conditional next-word distribution over ``vocab``.

    Subclasses implement :meth:`distribution`; neural models also override
    :meth:`token_log_probs` to score a whole sentence in one pass.
    """

    kind: str = ""
    vocab: Vocab
    predicts_end: bool = True

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        """``p(. | <s> history)`` as a probability vector of length ``len(vocab)``."""
        raise NotImplementedError

    def token_log_probs(self, words: Sequence[str]) -> np.ndarray:
        """Log-probability of each word (and of the sentence end when modelled)."""
        ids = self.vocab.encode(words)
        targets = ids + [self.vocab.eos] if self.predicts_end else ids
        with np.errstate(divide="ignore"):
            return np.array([math.log(p) if p > 0 else -math.inf
                             for p in (self.distribution(ids[:t])[y] for t, y in enumerate(targets))])

    def score_sentences(self, sentences: Sequence[Sequence[str]]) -> list[np.ndarray]:
        return [self.token_log_probs(s) for s in sentences]

    def log_prob(self, words: Sequence[str]) -> float:
        return float(self.token_log_probs(words).sum())


def token_probs(scorer: LmScorer, sentences: Sequence[Sequence[str]]) -> np.ndarray:
    """Probabilities of every scored event in ``sentences``, concatenated."""
    if not sentences:
        return np.zeros(0)
    return np.exp(np.concatenate(scorer.score_sentences(sentences)))


def perplexity(scorer: LmScorer, sentences: Sequence[Sequence[str]]) -> float:
    """``exp`` of the mean negative log-probability; sentence ends count as events."""
    logs = np.concatenate(scorer.score_sentences(sentences)) if sentences else np.zeros(0)
    if logs.size == 0:
        return 1.0
    if np.isneginf(logs).any():
        return math.inf
    return float(math.exp(-logs.mean()))
