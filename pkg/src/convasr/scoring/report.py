"""Corpus scoring, per-subset WER summaries and error tables."""
from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .align import DEL, INS, SUB, AlignmentResult, align
from .formats import GlmRules
from .normalize import normalize, scorable

OVERALL = "overall"


def _cell(tok: str, optional: bool) -> str:
    tok = tok.lower()
    return f"({tok})" if optional else tok


def error_tables(alignments: Sequence[AlignmentResult], top_n: int = 10) -> dict[str, list[str]]:
    """Most frequent substitutions ("count: ref / hyp"), deletions and insertions
    ("count: word"), by count descending then lexicographically."""
    subs: Counter = Counter()
    dels: Counter = Counter()
    ins: Counter = Counter()
    for a in alignments:
        for k, (op, r, h) in enumerate(a.pairs):
            opt = k in a.optional
            if op == SUB:
                subs[f"{_cell(r, opt)} / {h.lower()}"] += 1
            elif op == DEL:
                dels[_cell(r, opt)] += 1
            elif op == INS:
                ins[h.lower()] += 1

    def top(c: Counter) -> list[str]:
        return [f"{n}: {k}" for k, n in sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]

    return {"substitutions": top(subs), "deletions": top(dels), "insertions": top(ins)}


def render_error_tables(tables: Mapping[str, list[str]]) -> str:
    out = []
    for name in ("substitutions", "deletions", "insertions"):
        out.append(name)
        out.extend("  " + line for line in tables[name])
    return "\n".join(out) + "\n"


@dataclass
class SubsetScore:
    n_ref: int = 0
    subs: int = 0
    dels: int = 0
    ins: int = 0
    utterances: int = 0

    @property
    def wer(self) -> float:
        return 100.0 * (self.subs + self.dels + self.ins) / self.n_ref if self.n_ref else math.nan

    def add(self, a: AlignmentResult) -> None:
        self.n_ref += a.n_ref
        self.subs += a.subs
        self.dels += a.dels
        self.ins += a.ins
        self.utterances += 1


@dataclass
class ScoreReport:
    subsets: dict[str, SubsetScore]
    alignments: dict[str, AlignmentResult]
    missing_hyp: list[str] = field(default_factory=list)
    extra_hyp: list[str] = field(default_factory=list)

    def summary_lines(self) -> list[str]:
        """Machine-readable ``key=value`` lines, one per subset, overall last."""
        names = sorted(k for k in self.subsets if k != OVERALL) + [OVERALL]
        lines = []
        for k in names:
            s = self.subsets[k]
            lines.append(f"subset={k} utts={s.utterances} n_ref={s.n_ref} sub={s.subs} del={s.dels} "
                         f"ins={s.ins} wer={s.wer:.2f}")
        for uid in self.missing_hyp:
            lines.append(f"missing_hyp={uid}")
        for uid in self.extra_hyp:
            lines.append(f"extra_hyp={uid}")
        return lines

    def text(self) -> str:
        names = sorted(k for k in self.subsets if k != OVERALL) + [OVERALL]
        head = f"{'subset':<10} {'utts':>5} {'words':>6} {'sub':>5} {'del':>5} {'ins':>5} {'WER%':>6}"
        rows = [head, "-" * len(head)]
        for k in names:
            s = self.subsets[k]
            rows.append(f"{k:<10} {s.utterances:>5} {s.n_ref:>6} {s.subs:>5} {s.dels:>5} {s.ins:>5} {s.wer:>6.2f}")
        if self.missing_hyp or self.extra_hyp:
            rows.append(f"unmatched: {len(self.missing_hyp)} without hypothesis, {len(self.extra_hyp)} without reference")
        return "\n".join(rows) + "\n"

    def to_json(self) -> str:
        return json.dumps({k: {"n_ref": s.n_ref, "sub": s.subs, "del": s.dels, "ins": s.ins,
                               "utts": s.utterances, "wer": s.wer} for k, s in sorted(self.subsets.items())},
                          sort_keys=True)


def default_subset(utt_id: str) -> str:
    return utt_id.split("_", 1)[0] if "_" in utt_id else OVERALL


def prepare(text: str, glm: GlmRules | None = None):
    """GLM rewriting on raw words, then normalization; returns scorable tokens."""
    if glm is not None and len(glm):
        text = " ".join(glm._apply_words(text.split()))
    return scorable(normalize(text))


def score_corpus(refs: Mapping[str, str], hyps: Mapping[str, str | Sequence[str]], glm: GlmRules | None = None,
                 subset_of: Callable[[str], str] = default_subset, optional_hesitations: bool = False) -> ScoreReport:
    """Score hypotheses against references per subset and overall.

    Ids present on only one side are listed and skipped with a warning.
    """
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        warnings.warn(f"{len(missing)} reference ids without hypothesis, {len(extra)} hypothesis ids without "
                      "reference; scoring the intersection", UserWarning, stacklevel=2)
    subsets: dict[str, SubsetScore] = {OVERALL: SubsetScore()}
    aligns = {}
    for uid in sorted(set(refs) & set(hyps)):
        h = hyps[uid]
        h = h if isinstance(h, str) else " ".join(h)
        a = align(prepare(refs[uid], glm), prepare(h, glm), optional_hesitations)
        aligns[uid] = a
        sub = subset_of(uid)
        if sub != OVERALL:
            subsets.setdefault(sub, SubsetScore()).add(a)
        subsets[OVERALL].add(a)
    return ScoreReport(subsets, aligns, missing, extra)


def wer_table(reports: Mapping[str, ScoreReport], columns: Sequence[str]) -> str:
    """Rows = systems (or transcribers), columns = subsets, cells = WER %."""
    width = max([len("system")] + [len(k) for k in reports])
    head = f"{'system':<{width}} " + " ".join(f"{c:>8}" for c in columns)
    rows = [head]
    for name, rep in reports.items():
        cells = []
        for c in columns:
            s = rep.subsets.get(c)
            cells.append(f"{s.wer:>8.1f}" if s is not None and s.n_ref else f"{'-':>8}")
        rows.append(f"{name:<{width}} " + " ".join(cells))
    return "\n".join(rows) + "\n"
