"""Frame-level score fusion and a small Viterbi word decoder."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, FormatError, FusionError

_MAGIC = b"FSCORE\x00\x01"


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))


@dataclass
class FrameScores:
    """Per-frame log posteriors ``T x n_states`` from one model for one utterance."""

    log_probs: np.ndarray
    model_id: str = ""
    utt_id: str = ""

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.ndim != 2:
            raise FusionError(f"frame scores must be T x n_states, got {self.log_probs.shape}")

    @classmethod
    def from_logits(cls, logits: np.ndarray, model_id: str = "", utt_id: str = "") -> "FrameScores":
        x = np.asarray(logits, dtype=np.float64)
        return cls(x - _logsumexp_rows(x), model_id, utt_id)

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.log_probs.shape[1]

    def row_norm_error(self) -> float:
        return float(np.abs(_logsumexp_rows(self.log_probs)).max()) if self.T else 0.0

    # binary format: magic, uint32 T, uint32 n_states, uint16 + utf-8 model id,
    # uint16 + utf-8 utterance id, float64 little-endian row-major payload
    def to_bytes(self) -> bytes:
        mid, uid = self.model_id.encode(), self.utt_id.encode()
        head = _MAGIC + struct.pack("<II", self.T, self.n_states)
        head += struct.pack("<H", len(mid)) + mid + struct.pack("<H", len(uid)) + uid
        return head + self.log_probs.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FrameScores":
        if blob[:8] != _MAGIC:
            raise FormatError("not a frame-score file (bad magic)")
        try:
            T, S = struct.unpack_from("<II", blob, 8)
            pos = 16
            (n,) = struct.unpack_from("<H", blob, pos)
            mid = blob[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
            (n,) = struct.unpack_from("<H", blob, pos)
            uid = blob[pos + 2:pos + 2 + n].decode()
            pos += 2 + n
        except struct.error as exc:
            raise FormatError(f"truncated frame-score header: {exc}") from exc
        payload = blob[pos:]
        if len(payload) != 8 * T * S:
            raise FormatError(f"payload has {len(payload)} bytes, header implies {8 * T * S}")
        return cls(np.frombuffer(payload, dtype="<f8").reshape(T, S).astype(np.float64), mid, uid)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FrameScores":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class FusionConfig:
    weights: tuple[float, ...]
    pooling: str = "log-linear"          # or "linear"
    log_priors: tuple[float, ...] | None = None   # divide by priors when given

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ConfigError(f"fusion weights must be nonnegative with positive sum, got {self.weights}")
        object.__setattr__(self, "weights", tuple(float(v) for v in w / w.sum()))
        if self.pooling not in ("log-linear", "linear"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.log_priors is not None:
            object.__setattr__(self, "log_priors", tuple(float(v) for v in self.log_priors))

    @classmethod
    def uniform(cls, n: int, **kw) -> "FusionConfig":
        return cls(tuple([1.0 / n] * n), **kw)


def fuse(frames: Sequence[FrameScores], cfg: FusionConfig) -> FrameScores:
    """Combine aligned per-frame distributions; rows are renormalized."""
    if len(frames) != len(cfg.weights):
        raise FusionError(f"{len(frames)} score streams but {len(cfg.weights)} weights")
    shape = frames[0].log_probs.shape
    for f in frames[1:]:
        if f.log_probs.shape != shape:
            raise FusionError(f"score shapes differ: {shape} vs {f.log_probs.shape}")
        if f.utt_id != frames[0].utt_id:
            raise FusionError(f"utterance mismatch: {frames[0].utt_id!r} vs {f.utt_id!r}")
    w = np.asarray(cfg.weights)
    stack = np.stack([f.log_probs for f in frames])
    if cfg.pooling == "log-linear":
        active = w > 0   # weight 0 must not let -inf scores poison the pool
        pooled = np.tensordot(w[active], stack[active], axes=1)
    else:
        logw = np.log(np.where(w > 0, w, 1.0))[:, None, None]
        terms = np.where(w[:, None, None] > 0, stack + logw, -np.inf)
        m = terms.max(axis=0)
        m = np.where(np.isfinite(m), m, 0.0)
        pooled = m + np.log(np.exp(terms - m).sum(axis=0))
    if cfg.log_priors is not None:
        if len(cfg.log_priors) != shape[1]:
            raise FusionError(f"{len(cfg.log_priors)} priors for {shape[1]} states")
        pooled = pooled - np.asarray(cfg.log_priors)
    pooled = pooled - _logsumexp_rows(pooled)
    return FrameScores(pooled, "+".join(f.model_id for f in frames), frames[0].utt_id)


def state_log_priors(label_seqs: Sequence[np.ndarray], n_states: int, floor: float = 1e-6) -> np.ndarray:
    counts = np.bincount(np.concatenate(label_seqs), minlength=n_states).astype(np.float64)
    p = np.maximum(counts / counts.sum(), floor)
    return np.log(p / p.sum())


# -- decoding ------------------------------------------------------------------------

@dataclass
class Bigram:
    """Word bigram with sentence start and end: ``log_start[w]``,
    ``log_trans[w, v]`` and ``log_end[w]``."""

    words: list[str]
    log_start: np.ndarray
    log_trans: np.ndarray
    log_end: np.ndarray

    @classmethod
    def uniform(cls, words: Sequence[str]) -> "Bigram":
        n = len(words)
        return cls(list(words), np.full(n, -math.log(n)), np.full((n, n), -math.log(n + 1)),
                   np.full(n, -math.log(n + 1)))

    @classmethod
    def from_sentences(cls, sentences: Sequence[Sequence[str]], words: Sequence[str], add_k: float = 0.5) -> "Bigram":
        idx = {w: i for i, w in enumerate(words)}
        n = len(words)
        start = np.full(n, add_k)
        trans = np.full((n, n + 1), add_k)
        for s in sentences:
            ids = [idx[w] for w in s]
            if not ids:
                continue
            start[ids[0]] += 1
            for a, b in zip(ids, ids[1:]):
                trans[a, b] += 1
            trans[ids[-1], n] += 1
        start /= start.sum()
        trans /= trans.sum(axis=1, keepdims=True)
        return cls(list(words), np.log(start), np.log(trans[:, :n]), np.log(trans[:, n]))


@dataclass(frozen=True)
class DecodeConfig:
    lm_weight: float = 1.0
    insertion_penalty: float = 0.0
    acoustic_scale: float = 1.0
    use_end: bool = True


@dataclass
class Hypothesis:
    words: list[str]
    score: float
    boundaries: list[tuple[int, int]] = field(default_factory=list)   # (start, end) frames per word


def viterbi_decode(scores: FrameScores | np.ndarray, lexicon: Mapping[str, Sequence[int]], lm: Bigram | None = None,
                   cfg: DecodeConfig = DecodeConfig()) -> Hypothesis:
    """Best word sequence under frame scores, bigram LM and insertion penalty.

    Each word is a left-to-right chain of its states with self-loops and at
    least one frame per state. Path score is ``acoustic_scale * sum_t
    log p(s_t) + lm_weight * log P(words) - insertion_penalty * n_words``.
    Equal-score paths resolve toward the lexicographically smaller word history.
    """
    if not lexicon:
        raise ConfigError("empty lexicon")
    lp = scores.log_probs if isinstance(scores, FrameScores) else np.asarray(scores, dtype=np.float64)
    words = sorted(lexicon)
    lm = lm or Bigram.uniform(words)
    lm_idx = {w: i for i, w in enumerate(lm.words)}
    missing = [w for w in words if w not in lm_idx]
    if missing:
        raise ConfigError(f"words missing from LM: {missing}")
    T = lp.shape[0]
    if T == 0:
        return Hypothesis([], 0.0)
    nodes = [(w, j) for w in words for j in range(len(lexicon[w]))]
    node_state = [lexicon[w][j] for w, j in nodes]
    first = {w: nodes.index((w, 0)) for w in words}
    last = {w: nodes.index((w, len(lexicon[w]) - 1)) for w in words}
    a, lw, pen = cfg.acoustic_scale, cfg.lm_weight, cfg.insertion_penalty
    neg = -math.inf
    # cell: (score, history tuple, word start frames tuple)
    cur: list[tuple[float, tuple, tuple]] = [(neg, (), ())] * len(nodes)
    for w in words:
        k = first[w]
        cur[k] = (a * lp[0, node_state[k]] + lw * lm.log_start[lm_idx[w]] - pen, (w,), (0,))
    for t in range(1, T):
        nxt: list[tuple[float, tuple, tuple]] = [(neg, (), ())] * len(nodes)

        def offer(k, score, hist, starts):
            best = nxt[k]
            if score > best[0] or (score == best[0] and score > neg and hist < best[1]):
                nxt[k] = (score, hist, starts)

        for k, (w, j) in enumerate(nodes):
            score, hist, starts = cur[k]
            if score == neg:
                continue
            offer(k, score, hist, starts)
            if j + 1 < len(lexicon[w]):
                offer(k + 1, score, hist, starts)
            elif k == last[w]:
                for v in words:
                    offer(first[v], score + lw * lm.log_trans[lm_idx[w], lm_idx[v]] - pen, hist + (v,),
                          starts + (t,))
        for k in range(len(nodes)):
            s, h, st = nxt[k]
            if s > neg:
                nxt[k] = (s + a * lp[t, node_state[k]], h, st)
        cur = nxt
    best = (neg, (), ())
    for w in words:
        s, h, st = cur[last[w]]
        if s == neg:
            continue
        if cfg.use_end:
            s += lw * lm.log_end[lm_idx[w]]
        if s > best[0] or (s == best[0] and h < best[1]):
            best = (s, h, st)
    if best[0] == neg:
        return Hypothesis([], neg)
    starts = list(best[2]) + [T]
    return Hypothesis(list(best[1]), best[0], [(starts[i], starts[i + 1]) for i in range(len(best[1]))])


# -- weight tuning -------------------------------------------------------------------------

def tune_weights(streams: Sequence[Sequence[FrameScores]], refs: Sequence[Sequence[str]],
                 decode: Callable[[FrameScores], list[str]], grid: Sequence[float] | None = None,
                 pooling: str = "log-linear") -> tuple[FusionConfig, float]:
    """Grid search of two-model weights (or uniform for more) minimising dev WER."""
    from .scoring.align import corpus_wer

    n_models = len(streams[0])
    if n_models == 1:
        cfg = FusionConfig((1.0,), pooling)
        return cfg, corpus_wer(refs, [decode(fuse(s, cfg)) for s in streams])
    if n_models != 2:
        cfg = FusionConfig.uniform(n_models, pooling=pooling)
        return cfg, corpus_wer(refs, [decode(fuse(s, cfg)) for s in streams])
    grid = grid if grid is not None else [i / 10 for i in range(11)]
    best = None
    for w in grid:
        cfg = FusionConfig((w, 1.0 - w), pooling)
        wer = corpus_wer(refs, [decode(fuse(s, cfg)) for s in streams])
        # ties go to the weight closest to uniform
        key = (wer, abs(w - 0.5))
        if best is None or key < best[0]:
            best = (key, cfg, wer)
    return best[1], best[2]
