"""N-best lists: file format and rescoring with interpolated language models.

File layout: blocks separated by a blank line; the first line of a block is
the utterance id, each following line is ``rank acoustic_logp lm_logp words...``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError, FormatError
from .base import LmScorer
from .interpolate import InterpolatedLM, _check_weights


@dataclass(frozen=True)
class NBestEntry:
    words: tuple[str, ...]
    acoustic: float
    lm: float = 0.0
    total: float = 0.0


@dataclass
class NBestList:
    utt_id: str
    entries: list[NBestEntry] = field(default_factory=list)

    @property
    def best(self) -> NBestEntry:
        return self.entries[0]


def rescore_nbest(nbest: NBestList, scorers: Sequence[LmScorer], weights: Sequence[float],
                  acoustic_weight: float = 1.0, insertion_penalty: float = 0.0,
                  lm_weight: float = 1.0) -> NBestList:
    """``total = acoustic_weight * acoustic + lm_weight * lm + insertion_penalty * len``.

    ``lm`` is the sentence log-probability under the word-level linear mixture
    of ``scorers``. Entries are stably sorted by total, best first.
    """
    if not nbest.entries:
        raise DataError(f"n-best list for {nbest.utt_id!r} is empty")
    _check_weights(weights, len(scorers))
    mixture = InterpolatedLM(scorers, weights) if len(scorers) > 1 else scorers[0]
    rescored = []
    for e in nbest.entries:
        lm = mixture.log_prob(e.words)
        total = acoustic_weight * e.acoustic + (lm_weight * lm if lm_weight else 0.0) \
            + insertion_penalty * len(e.words)
        rescored.append(replace(e, lm=lm, total=total))
    order = sorted(range(len(rescored)), key=lambda i: -rescored[i].total)
    return NBestList(nbest.utt_id, [rescored[i] for i in order])


def write_nbest(lists: Sequence[NBestList], path) -> None:
    blocks = []
    for nb in lists:
        lines = [nb.utt_id]
        for rank, e in enumerate(nb.entries, 1):
            lines.append(" ".join([str(rank), repr(float(e.acoustic)), repr(float(e.lm)), *e.words]))
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n")


def read_nbest(path) -> list[NBestList]:
    out: list[NBestList] = []
    for block in Path(path).read_text().strip().split("\n\n"):
        lines = [ln for ln in block.splitlines() if ln.strip()]
        if not lines:
            continue
        nb = NBestList(lines[0].strip())
        for ln in lines[1:]:
            parts = ln.split()
            try:
                int(parts[0])
                ac, lm = float(parts[1]), float(parts[2])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"bad n-best line {ln!r}") from exc
            nb.entries.append(NBestEntry(tuple(parts[3:]), ac, lm, ac + lm))
        out.append(nb)
    return out


def oracle_rank(nbest: NBestList, reference: Sequence[str]) -> int | None:
    """Zero-based rank of the exact reference in the list, if present."""
    ref = tuple(reference)
    for i, e in enumerate(nbest.entries):
        if e.words == ref:
            return i
    return None


def synthetic_nbest(utt_id: str, reference: Sequence[str], vocab_words: Sequence[str], n: int,
                    seed: int = 0) -> NBestList:
    """The reference plus ``n - 1`` one-edit corruptions with noisy acoustic scores."""
    rng = np.random.default_rng(seed)
    ref = tuple(reference)
    seen = {ref}
    entries = [NBestEntry(ref, float(-len(ref) * 2.0 + rng.normal(0, 1.0)))]
    attempts = 0
    while len(entries) < n and attempts < 50 * n:
        attempts += 1
        words = list(ref)
        pos = int(rng.integers(len(words)))
        words[pos] = vocab_words[int(rng.integers(len(vocab_words)))]
        cand = tuple(words)
        if cand in seen:
            continue
        seen.add(cand)
        entries.append(NBestEntry(cand, float(-len(ref) * 2.0 + rng.normal(0, 1.0))))
    entries.sort(key=lambda e: -e.acoustic)
    return NBestList(utt_id, [replace(e, total=e.acoustic) for e in entries])
