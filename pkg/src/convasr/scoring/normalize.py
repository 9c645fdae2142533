"""Transcript normalization into tagged tokens.

Rules run in a fixed order:

1. bracketed markers (``[laughter]``, ``{no speech}``) become non-lexical tokens
2. ``...``, ``--``, ``((`` and ``))`` are deleted
3. words ending in ``-`` (partial words) become non-lexical
4. ``.``, ``,``, ``!`` and ``?`` are deleted, and tokens left empty are dropped

Tokens starting with ``%`` (``%hes``, ``%bcack``) are tagged as hesitations.
They are scored like words unless the caller asks for optional deletion.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

LEXICAL = "lexical"
NON_LEXICAL = "non_lexical"
HESITATION = "hesitation"

_TOKEN = re.compile(r"\[[^\[\]]*\]|\{[^{}]*\}|\S+")
_REMOVE = re.compile(r"\.\.\.|--|\(\(|\)\)")
_PUNCT = re.compile(r"[.,!?]")


@dataclass(frozen=True)
class Token:
    surface: str
    tag: str = LEXICAL
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.tag not in (LEXICAL, NON_LEXICAL, HESITATION):
            raise ValueError(f"unknown tag {self.tag!r}")

    @property
    def key(self) -> str:
        """Case-folded form used for comparison."""
        return self.surface.upper()

    @property
    def scorable(self) -> bool:
        return self.tag != NON_LEXICAL


def normalize(text: str) -> list[Token]:
    out: list[Token] = []
    for m in _TOKEN.finditer(text):
        raw = m.group(0)
        span = (m.start(), m.end())
        if raw[0] in "[{" and raw[-1] in "]}":
            out.append(Token(raw, NON_LEXICAL, span))
            continue
        if any(c in raw for c in "[]{}"):
            warnings.warn(f"unbalanced marker {raw!r} kept as a word", UserWarning, stacklevel=2)
        word = _REMOVE.sub("", raw)
        if not word:
            continue
        if word.endswith("-"):
            out.append(Token(word, NON_LEXICAL, span))
            continue
        word = _PUNCT.sub("", word)
        if not word:
            continue
        out.append(Token(word, HESITATION if word.startswith("%") else LEXICAL, span))
    return out


def render(tokens: Iterable[Token]) -> str:
    return " ".join(t.surface for t in tokens)


def scorable(tokens: Sequence[Token]) -> list[Token]:
    return [t for t in tokens if t.scorable]


def plain_tokens(words: Iterable[str]) -> list[Token]:
    """Wrap already-clean words (decoder output, TRN fields) without rule processing."""
    return [Token(w, HESITATION if w.startswith("%") else LEXICAL) for w in words]


_TAG_LETTER = {LEXICAL: "L", NON_LEXICAL: "N", HESITATION: "H"}


def describe(tokens: Sequence[Token]) -> tuple[str, str]:
    """``(scoring string, tagged surfaces)`` as used by the golden fixture files."""
    return (" ".join(t.key for t in tokens if t.scorable),
            " ".join(f"{t.surface}/{_TAG_LETTER[t.tag]}" for t in tokens))
