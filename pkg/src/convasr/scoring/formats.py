"""CTM, TRN and GLM file formats.

CTM: one word per line, ``<id> <channel> <start> <duration> <word>`` with
start and duration written as ``%.3f``; ``;;`` lines are comments.
TRN: one utterance per line, ``word word ... (<id>)``.
GLM: one rule per line, ``FROM => TO`` where both sides are token sequences
(TO may be empty); ``#`` and ``;;`` start comments.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..errors import ConfigError, FormatError
from .normalize import Token


@dataclass(frozen=True)
class CtmRow:
    recording: str
    channel: str
    start: float
    duration: float
    word: str

    def __post_init__(self):
        if not self.duration > 0:
            raise FormatError(f"CTM duration must be > 0, got {self.duration}")

    def line(self) -> str:
        return f"{self.recording} {self.channel} {self.start:.3f} {self.duration:.3f} {self.word}"


def to_ctm(utt_id: str, channel: str, start: float, duration: float, tokens: Sequence[Token]) -> list[CtmRow]:
    """Split the utterance duration uniformly over its scorable tokens."""
    words = [t for t in tokens if t.scorable]
    if not words:
        warnings.warn(f"{utt_id}: no scorable tokens, skipped", UserWarning, stacklevel=2)
        return []
    step = duration / len(words)
    return [CtmRow(utt_id, channel, start + i * step, step, t.surface) for i, t in enumerate(words)]


def write_ctm(rows: Iterable[CtmRow], path) -> None:
    Path(path).write_text("".join(r.line() + "\n" for r in rows))


def read_ctm(path) -> list[CtmRow]:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(";;"):
            continue
        f = line.split()
        if len(f) < 5:
            raise FormatError(f"{path}:{n}: CTM line needs 5 fields, got {len(f)}")
        try:
            rows.append(CtmRow(f[0], f[1], float(f[2]), float(f[3]), f[4]))
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
    return rows


def ctm_to_words(rows: Iterable[CtmRow]) -> dict[str, list[str]]:
    """Words per recording id, ordered by start time (stable for equal starts)."""
    by: dict[str, list[CtmRow]] = {}
    for r in rows:
        by.setdefault(r.recording, []).append(r)
    return {k: [r.word for r in sorted(v, key=lambda r: r.start)] for k, v in by.items()}


_TRN = re.compile(r"^(.*)\(([^()]*)\)\s*$")


def read_trn(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        m = _TRN.match(line)
        if not m:
            raise FormatError(f"{path}:{n}: TRN line must end with (utterance-id)")
        uid = m.group(2).strip()
        if uid in out:
            raise FormatError(f"{path}:{n}: duplicate utterance id {uid!r}")
        out[uid] = m.group(1).strip()
    return out


def write_trn(utts: Mapping[str, str | Sequence[str]], path) -> None:
    lines = []
    for uid, text in utts.items():
        text = text if isinstance(text, str) else " ".join(text)
        lines.append(f"{text} ({uid})".lstrip())
    Path(path).write_text("\n".join(lines) + "\n")


# -- GLM -----------------------------------------------------------------------------

@dataclass(frozen=True)
class GlmRule:
    source: tuple[str, ...]
    target: tuple[str, ...]


class GlmRules:
    """Rewrite rules applied to a fixpoint; matching is case-insensitive,
    longest source first, leftmost position first."""

    def __init__(self, rules: Iterable[GlmRule] = ()):
        self.rules = [r for r in rules if tuple(w.upper() for w in r.source) != tuple(w.upper() for w in r.target)]
        for r in self.rules:
            if not r.source:
                raise ConfigError("GLM rule with empty left side")
        self._sorted = sorted(self.rules, key=lambda r: -len(r.source))
        for r in self.rules:
            # a rule set is cyclic if some rule's output rewrites back into a state already seen
            self._apply_words(list(r.source))

    def __len__(self) -> int:
        return len(self.rules)

    def _rewrite_once(self, words: list[str]) -> list[str] | None:
        keys = [w.upper() for w in words]
        for i in range(len(words)):
            for r in self._sorted:
                n = len(r.source)
                if keys[i:i + n] == [w.upper() for w in r.source]:
                    return words[:i] + list(r.target) + words[i + n:]
        return None

    def _apply_words(self, words: list[str]) -> list[str]:
        seen = {tuple(w.upper() for w in words)}
        limit = 10 * (len(words) + 1) * (len(self.rules) + 1)
        for _ in range(limit):
            nxt = self._rewrite_once(words)
            if nxt is None:
                return words
            key = tuple(w.upper() for w in nxt)
            if key in seen:
                raise ConfigError(f"GLM rules cycle on {' '.join(words)!r}")
            seen.add(key)
            words = nxt
        raise ConfigError("GLM rewriting did not terminate")

    def apply(self, tokens: Sequence[Token]) -> list[Token]:
        """Rewrite the surface forms of ``tokens``; tags carry over positionally
        where the length is unchanged, otherwise rewritten tokens are lexical."""
        if not self.rules:
            return list(tokens)
        words = self._apply_words([t.surface for t in tokens])
        if [w.upper() for w in words] == [t.key for t in tokens]:
            return list(tokens)
        from .normalize import plain_tokens
        return plain_tokens(words)


def parse_glm(text: str) -> GlmRules:
    rules = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].split(";;", 1)[0].strip()
        if not line:
            continue
        if "=>" not in line:
            raise ConfigError(f"GLM line {n}: expected 'FROM => TO'")
        src, tgt = line.split("=>", 1)
        # sclite-style trailing "/ [ ] __ [ ] ;;" context fields are not supported
        rules.append(GlmRule(tuple(src.split()), tuple(tgt.split())))
    return GlmRules(rules)


def read_glm(path) -> GlmRules:
    return parse_glm(Path(path).read_text())


def period_rules() -> GlmRules:
    """``A. => A`` through ``Z. => Z``."""
    return GlmRules(GlmRule((f"{c}.",), (c,)) for c in "ABCDEFGHIJKLMNOPQRSTUVWXYZ")


def apply_glm(tokens: Sequence[Token], rules: GlmRules) -> list[Token]:
    return rules.apply(tokens)
