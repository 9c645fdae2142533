"""LM training text drawn from a synthetic corpus's word grammar."""
from __future__ import annotations

import numpy as np

from ..corpus import Corpus


def shifted_grammar(corpus: Corpus, shift: float, seed: int) -> Corpus:
    """Copy of ``corpus`` whose word grammar is mixed with a random one.

    ``shift = 0`` keeps the in-domain grammar; ``shift = 1`` replaces it.
    Only the grammar changes, so the copy is for text sampling only.
    """
    rng = np.random.default_rng([seed, 7])
    V = len(corpus.words)
    start = (1 - shift) * corpus.start_probs + shift * rng.dirichlet(np.ones(V))
    other = rng.dirichlet(np.full(V + 1, 0.7), size=V)
    other[:, -1] = corpus.transitions[:, -1]
    other[:, :-1] *= (1 - other[:, -1:]) / other[:, :-1].sum(axis=1, keepdims=True)
    trans = (1 - shift) * corpus.transitions + shift * other
    return Corpus(corpus.config, [], corpus.lexicon, start, trans, corpus.speaker_embeddings)


def lm_corpora(corpus: Corpus, n_general: int = 600, n_domain: int = 200, n_heldout: int = 100,
               shift: float = 0.5, seed: int = 0) -> dict[str, list[list[str]]]:
    """General (domain-shifted) text, in-domain transcripts and an in-domain heldout set."""
    return {
        "general": shifted_grammar(corpus, shift, seed).sample_sentences(n_general, seed + 101),
        "domain": corpus.sample_sentences(n_domain, seed + 102),
        "heldout": corpus.sample_sentences(n_heldout, seed + 103),
    }
