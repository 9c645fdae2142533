"""Transcript normalization, CTM/TRN/GLM formats, alignment and WER reports."""
from .align import AlignmentResult, align, corpus_wer, edit_distance
from .formats import (
    CtmRow,
    GlmRule,
    GlmRules,
    apply_glm,
    ctm_to_words,
    parse_glm,
    period_rules,
    read_ctm,
    read_glm,
    read_trn,
    to_ctm,
    write_ctm,
    write_trn,
)
from .normalize import (
    HESITATION,
    LEXICAL,
    NON_LEXICAL,
    Token,
    normalize,
    plain_tokens,
    render,
    scorable,
)
from .report import (
    ScoreReport,
    SubsetScore,
    error_tables,
    render_error_tables,
    score_corpus,
    wer_table,
)

__all__ = [
    "AlignmentResult", "CtmRow", "GlmRule", "GlmRules", "HESITATION", "LEXICAL", "NON_LEXICAL", "ScoreReport",
    "SubsetScore", "Token", "align", "apply_glm", "corpus_wer", "ctm_to_words", "edit_distance", "error_tables",
    "normalize", "parse_glm", "period_rules", "plain_tokens", "read_ctm", "read_glm", "read_trn", "render",
    "render_error_tables", "scorable", "score_corpus", "to_ctm", "wer_table", "write_ctm", "write_trn",
]
