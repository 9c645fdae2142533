"""Word vocabulary with sentence-begin, sentence-end and unknown specials."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import ConfigError, DataError

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
SPECIALS = (BOS, EOS, UNK)


@dataclass
class Vocab:
    """Dense ids from 0; the three specials always occupy ids 0, 1, 2."""

    words: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if list(self.words[:3]) != list(SPECIALS):
            raise ConfigError(f"vocabulary must start with {SPECIALS}")
        if len(set(self.words)) != len(self.words):
            raise ConfigError("duplicate vocabulary entries")
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], extra: Iterable[str] = ()) -> "Vocab":
        """Specials first, then every training word in first-seen order."""
        seen: dict[str, None] = {}
        for sent in sentences:
            for w in sent:
                if w in SPECIALS:
                    raise DataError(f"training text contains reserved token {w!r}")
                seen.setdefault(w, None)
        for w in extra:
            if w not in SPECIALS:
                seen.setdefault(w, None)
        if not seen:
            raise DataError("empty corpus")
        return cls([*SPECIALS, *seen])

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def unk(self) -> int:
        return 2

    def id(self, word: str) -> int:
        return self.index.get(word, self.unk)

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def to_json(self) -> str:
        return json.dumps(self.words)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(json.loads(Path(path).read_text()))
