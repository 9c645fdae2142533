"""Minimum edit-distance word alignment with sclite-style uniform costs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .normalize import HESITATION, Token

MATCH, SUB, DEL, INS, OPT = "match", "sub", "del", "ins", "opt"


@dataclass
class AlignmentResult:
    pairs: list[tuple[str, str | None, str | None]]   # (op, ref surface, hyp surface)
    matches: int = 0
    subs: int = 0
    dels: int = 0
    ins: int = 0
    optional: set[int] = field(default_factory=set)    # pair indices whose ref token was optional

    @property
    def n_ref(self) -> int:
        return self.matches + self.subs + self.dels

    @property
    def errors(self) -> int:
        return self.subs + self.dels + self.ins

    @property
    def wer(self) -> float:
        """Errors over reference words; NaN when the reference is empty."""
        return self.errors / self.n_ref if self.n_ref else math.nan


def _unpack(seq, optional_hesitations):
    """Surfaces, comparison keys and optional flags for tokens or plain strings."""
    surf, keys, opt = [], [], []
    for t in seq:
        if isinstance(t, Token):
            surf.append(t.surface)
            keys.append(t.key)
            opt.append(optional_hesitations and t.tag == HESITATION)
        else:
            surf.append(t)
            keys.append(t.upper())
            opt.append(optional_hesitations and t.startswith("%"))
    return surf, keys, opt


def align(ref: Sequence[Token | str], hyp: Sequence[Token | str], optional_hesitations: bool = False) -> AlignmentResult:
    """Align two scorable token sequences; sub = del = ins = 1.

    Among optimal scripts the backtrace from the end prefers match, then
    substitution, then deletion, then insertion. With ``optional_hesitations``
    deleting a hesitation from the reference is free and not counted.
    """
    ref, r, opt = _unpack(ref, optional_hesitations)
    hyp, h, _ = _unpack(hyp, False)
    n, m = len(r), len(h)
    # cost table, row-major lists for speed on short inputs
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for j in range(1, m + 1):
        D[0][j] = j
    for i in range(1, n + 1):
        del_cost = 0 if opt[i - 1] else 1
        row, prev = D[i], D[i - 1]
        row[0] = prev[0] + del_cost
        ri = r[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (ri != h[j - 1])
            up = prev[j] + del_cost
            left = row[j - 1] + 1
            row[j] = diag if diag <= up and diag <= left else (up if up <= left else left)
    pairs: list[tuple[str, str | None, str | None]] = []
    optional: list[bool] = []
    i, j = n, m
    while i or j:
        if i and j and D[i][j] == D[i - 1][j - 1] + (r[i - 1] != h[j - 1]):
            pairs.append((MATCH if r[i - 1] == h[j - 1] else SUB, ref[i - 1], hyp[j - 1]))
            optional.append(opt[i - 1])
            i, j = i - 1, j - 1
        elif i and D[i][j] == D[i - 1][j] + (0 if opt[i - 1] else 1):
            pairs.append((OPT if opt[i - 1] else DEL, ref[i - 1], None))
            optional.append(opt[i - 1])
            i -= 1
        else:
            pairs.append((INS, None, hyp[j - 1]))
            optional.append(False)
            j -= 1
    pairs.reverse()
    optional.reverse()
    res = AlignmentResult(pairs, optional={k for k, o in enumerate(optional) if o})
    for op, _, _ in pairs:
        if op == MATCH:
            res.matches += 1
        elif op == SUB:
            res.subs += 1
        elif op == DEL:
            res.dels += 1
        elif op == INS:
            res.ins += 1
    return res


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    return align(list(ref), list(hyp)).errors


def corpus_wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """Pooled WER in percent over utterance pairs."""
    errors = total = 0
    for r, h in zip(refs, hyps, strict=True):
        a = align(list(r), list(h))
        errors += a.errors
        total += a.n_ref
    return 100.0 * errors / total if total else math.nan
