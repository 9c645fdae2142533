"""Interpolated absolute-discounting n-gram model."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, DataError
from .base import LmScorer
from .vocab import Vocab


class NgramLM(LmScorer):
    """Each order interpolates its discounted counts with the next-lower order::

        p_k(w|h) = max(c(h,w) - D, 0) / c(h) + D * types(h) / c(h) * p_{k-1}(w|h')

    where ``h'`` drops the oldest word. The bottom of the chain is uniform over
    every predictable token, so unseen words reach ``<unk>`` with nonzero mass
    whenever ``D > 0``. Contexts never seen fall through to the lower order.
    """

    kind = "ngram"

    def __init__(self, vocab: Vocab, order: int, discount: float, counts: list[dict[tuple, np.ndarray]],
                 predicts_end: bool = True):
        self.vocab = vocab
        self.order = order
        self.discount = discount
        self.counts = counts
        self.predicts_end = predicts_end
        mask = np.ones(len(vocab))
        mask[vocab.bos] = 0
        if not predicts_end:
            mask[vocab.eos] = 0
        self._uniform = mask / mask.sum()

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        h = [self.vocab.bos, *history] if self.predicts_end else list(history)
        p = self._uniform
        D = self.discount
        for k in range(self.order):
            if len(h) < k:
                break
            c = self.counts[k].get(tuple(h[len(h) - k:]))
            if c is None:
                break
            total = c.sum()
            types = np.count_nonzero(c)
            p = np.maximum(c - D, 0.0) / total + D * types / total * p
        return p

    def to_json(self) -> str:
        return json.dumps({
            "order": self.order, "discount": self.discount, "predicts_end": self.predicts_end,
            "vocab": self.vocab.words,
            "counts": [[[list(ctx), {int(i): float(c[i]) for i in np.flatnonzero(c)}] for ctx, c in level.items()]
                       for level in self.counts],
        })

    @classmethod
    def from_json(cls, text: str) -> "NgramLM":
        d = json.loads(text)
        vocab = Vocab(d["vocab"])
        counts = []
        for level in d["counts"]:
            table = {}
            for ctx, sparse in level:
                c = np.zeros(len(vocab))
                for i, v in sparse.items():
                    c[int(i)] = v
                table[tuple(ctx)] = c
            counts.append(table)
        return cls(vocab, d["order"], d["discount"], counts, d["predicts_end"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NgramLM":
        return cls.from_json(Path(path).read_text())


def train_ngram(sentences: Sequence[Sequence[str]], order: int, discount: float = 0.7,
                vocab: Vocab | None = None, predicts_end: bool = True) -> NgramLM:
    """Count-based model of the given ``order``.

    With ``predicts_end=False`` the text is treated as an unbounded stream:
    no sentence-begin context and no sentence-end events.
    """
    if order < 1:
        raise ConfigError(f"n-gram order must be >= 1, got {order}")
    if not 0.0 <= discount <= 1.0:
        raise ConfigError(f"discount must lie in [0, 1], got {discount}")
    if not any(len(s) for s in sentences):
        raise DataError("empty corpus")
    vocab = vocab or Vocab.build(sentences)
    V = len(vocab)
    counts: list[dict[tuple, np.ndarray]] = [{} for _ in range(order)]
    for sent in sentences:
        ids = vocab.encode(sent)
        h = [vocab.bos] if predicts_end else []
        targets = ids + [vocab.eos] if predicts_end else ids
        for y in targets:
            for k in range(min(order, len(h) + 1)):
                ctx = tuple(h[len(h) - k:])
                row = counts[k].get(ctx)
                if row is None:
                    row = counts[k][ctx] = np.zeros(V)
                row[y] += 1
            h.append(y)
    return NgramLM(vocab, order, discount, counts, predicts_end)
