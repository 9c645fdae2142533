"""Language models, Brown clustering, interpolation and n-best rescoring."""
from .base import KINDS, LmScorer, perplexity, token_probs
from .brown import brown_cluster, brown_from_counts, class_ami
from .data import lm_corpora, shifted_grammar
from .interpolate import (
    InterpolatedLM,
    InterpolationWeights,
    em_weights,
    event_probs,
    mixture_perplexity,
    tune_interpolation,
)
from .nbest import (
    NBestEntry,
    NBestList,
    read_nbest,
    rescore_nbest,
    synthetic_nbest,
    write_nbest,
)
from .neural import (
    LmSchedule,
    NeuralLM,
    NeuralLmConfig,
    train_char_lstm,
    train_word_dcc,
    train_word_lstm,
)
from .ngram import NgramLM, train_ngram
from .vocab import BOS, EOS, UNK, Vocab

__all__ = [
    "BOS", "EOS", "KINDS", "UNK", "InterpolatedLM", "InterpolationWeights", "LmSchedule", "LmScorer",
    "NBestEntry", "NBestList", "NeuralLM", "NeuralLmConfig", "NgramLM", "Vocab", "brown_cluster",
    "brown_from_counts", "class_ami", "em_weights", "event_probs", "lm_corpora", "mixture_perplexity", "perplexity",
    "read_nbest", "rescore_nbest", "shifted_grammar", "synthetic_nbest", "token_probs", "train_char_lstm",
    "train_ngram", "train_word_dcc", "train_word_lstm", "tune_interpolation", "write_nbest",
]
