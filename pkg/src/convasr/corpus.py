"""Synthetic acoustic corpora and the feature/batching plumbing around them.

The generator is a toy version of conversational data: a bigram word grammar,
a lexicon expanding each word into a left-to-right run of HMM states, and
frames drawn from a Gaussian per state shifted by a per-speaker offset. Each
speaker has a true embedding; an utterance's speaker vector is that embedding
plus noise (a stand-in for an i-vector), and the speaker offset is a linear
image of the same embedding, so the vector genuinely predicts the shift.

Two frame streams are produced per utterance: ``fmllr`` (speaker-shifted
features, default 8 dims; 40 in the full system) and ``logmel`` (a
spectrally smooth stream over ``mel_bins`` bins; 64 in the full system).
Speaker vectors default to 4 dims (100 in the full system).
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError, SpecError

CORPUS_FORMAT = "convasr-corpus"
CORPUS_VERSION = 1

# word list echoes the most frequent error words of conversational scoring
BASE_WORDS = ["a", "the", "and", "in", "is", "was", "it", "that", "you", "oh",
              "yeah", "to", "him", "them", "too", "two", "well", "i", "have", "not"]


@dataclass(frozen=True)
class CorpusConfig:
    seed: int = 0
    n_speakers: int = 4
    n_states: int = 20
    n_words: int = 8
    n_utts: int = 60
    T_range: tuple[int, int] = (40, 90)
    feat_dim: int = 8
    mel_bins: int = 16
    spk_dim: int = 4
    state_sep: float = 1.0
    speaker_shift: float = 0.6
    noise: float = 0.6
    mel_noise: float = 0.6
    ivector_noise: float = 0.05
    dur_range: tuple[int, int] = (2, 5)

    def __post_init__(self):
        for name in ("n_speakers", "n_states", "n_words", "n_utts", "feat_dim", "mel_bins", "spk_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_states < self.n_words:
            raise ConfigError(
                f"n_states={self.n_states} < n_words={self.n_words}: every word needs at least one state")
        lo, hi = self.T_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad T_range {self.T_range}")
        dlo, dhi = self.dur_range
        if not 1 <= dlo <= dhi:
            raise ConfigError(f"bad dur_range {self.dur_range}")


@dataclass
class Utterance:
    id: str
    frames: np.ndarray           # T x feat_dim ("fmllr" stream)
    labels: np.ndarray           # T state ids
    speaker_id: str
    speaker_vector: np.ndarray   # spk_dim
    words: list[str] = field(default_factory=list)
    streams: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.frames.ndim != 2 or len(self.frames) < 1:
            raise DataError(f"{self.id}: frames must be a non-empty T x F matrix")
        if len(self.labels) != len(self.frames):
            raise DataError(f"{self.id}: {len(self.labels)} labels for {len(self.frames)} frames")

    @property
    def T(self) -> int:
        return len(self.frames)

    def stream(self, name: str) -> np.ndarray:
        if name == "fmllr":
            return self.frames
        if name in ("ivector", "speaker_vector"):
            return np.broadcast_to(self.speaker_vector, (self.T, len(self.speaker_vector)))
        if name not in self.streams:
            raise SpecError(f"{self.id}: no stream named {name!r}")
        return self.streams[name]


@dataclass
class Corpus:
    config: CorpusConfig
    utterances: list[Utterance]
    lexicon: dict[str, tuple[int, ...]]
    start_probs: np.ndarray          # over words
    transitions: np.ndarray          # words x (words + 1); last column is sentence end
    speaker_embeddings: dict[str, np.ndarray]

    @property
    def words(self) -> list[str]:
        return list(self.lexicon)

    @property
    def n_states(self) -> int:
        return self.config.n_states

    def split(self, fractions: Sequence[float] = (0.7, 0.15, 0.15)) -> list[list[Utterance]]:
        """Deterministic contiguous split (utterances are already shuffled by speaker)."""
        n = len(self.utterances)
        bounds = np.round(np.cumsum([0.0, *fractions]) / sum(fractions) * n).astype(int)
        return [self.utterances[bounds[i]:bounds[i + 1]] for i in range(len(fractions))]

    def state_counts(self, utts: Sequence[Utterance] | None = None) -> np.ndarray:
        utts = self.utterances if utts is None else utts
        return np.bincount(np.concatenate([u.labels for u in utts]), minlength=self.n_states)

    def sample_sentences(self, n: int, seed: int) -> list[list[str]]:
        """Draw sentences from the corpus bigram grammar (LM training text)."""
        rng = np.random.default_rng(seed)
        words = self.words
        out = []
        for _ in range(n):
            sent = [words[rng.choice(len(words), p=self.start_probs)]]
            while len(sent) < 30:
                nxt = rng.choice(len(words) + 1, p=self.transitions[words.index(sent[-1])])
                if nxt == len(words):
                    break
                sent.append(words[nxt])
            out.append(sent)
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for u in self.utterances:
            h.update(u.id.encode())
            h.update(u.frames.tobytes())
            h.update(u.labels.tobytes())
            h.update(u.speaker_vector.tobytes())
            for k in sorted(u.streams):
                h.update(u.streams[k].tobytes())
        return h.hexdigest()


def _lexicon(n_words: int, n_states: int) -> dict[str, tuple[int, ...]]:
    names = BASE_WORDS[:n_words] + [f"w{i}" for i in range(len(BASE_WORDS), n_words)]
    blocks = np.array_split(np.arange(n_states), n_words)
    return {name: tuple(int(s) for s in block) for name, block in zip(names, blocks)}


def synth_corpus(config: CorpusConfig | None = None, **overrides) -> Corpus:
    """Generate a corpus; identical config gives bit-identical arrays."""
    cfg = config or CorpusConfig()
    if overrides:
        cfg = CorpusConfig(**{**asdict(cfg), **overrides})
    root = np.random.SeedSequence(cfg.seed)
    model_rng, speaker_rng, utt_rng = (np.random.default_rng(s) for s in root.spawn(3))

    lexicon = _lexicon(cfg.n_words, cfg.n_states)
    words = list(lexicon)
    start = model_rng.dirichlet(np.ones(cfg.n_words))
    trans = model_rng.dirichlet(np.full(cfg.n_words + 1, 0.7), size=cfg.n_words)
    # keep sentences from ending immediately
    trans[:, -1] = 0.1
    trans[:, :-1] *= 0.9 / trans[:, :-1].sum(axis=1, keepdims=True)

    state_means = model_rng.normal(0.0, cfg.state_sep, size=(cfg.n_states, cfg.feat_dim))
    # smooth spectral templates along the bin axis for the logmel stream
    raw = model_rng.normal(0.0, cfg.state_sep, size=(cfg.n_states, cfg.mel_bins + 4))
    kernel = np.array([1.0, 2.0, 3.0, 2.0, 1.0]) / 9.0 * 2.0
    mel_means = np.stack([np.convolve(r, kernel, mode="valid") for r in raw])
    shift_map = model_rng.normal(0.0, 1.0, size=(cfg.spk_dim, cfg.feat_dim))
    mel_shift_map = model_rng.normal(0.0, 1.0, size=(cfg.spk_dim, cfg.mel_bins))

    embeddings = {}
    for k in range(cfg.n_speakers):
        e = speaker_rng.normal(0.0, 1.0, size=cfg.spk_dim)
        embeddings[f"spk{k:02d}"] = 0.5 * e / max(1.0, np.abs(e).max())

    utts = []
    lo, hi = cfg.T_range
    dlo, dhi = cfg.dur_range
    for i in range(cfg.n_utts):
        spk = f"spk{int(utt_rng.integers(cfg.n_speakers)):02d}"
        emb = embeddings[spk]
        seq: list[str] = []
        labels: list[int] = []
        w = int(utt_rng.choice(cfg.n_words, p=start))
        while True:
            durs = utt_rng.integers(dlo, dhi + 1, size=len(lexicon[words[w]]))
            if seq and len(labels) + int(durs.sum()) > hi:
                break
            seq.append(words[w])
            for s, d in zip(lexicon[words[w]], durs):
                labels.extend([s] * int(d))
            if len(labels) >= lo:
                break
            p = trans[w, :-1] / trans[w, :-1].sum()
            w = int(utt_rng.choice(cfg.n_words, p=p))
        lab = np.array(labels, dtype=np.int64)
        T = len(lab)
        shift = cfg.speaker_shift * (emb @ shift_map) / math.sqrt(cfg.spk_dim) * 2.0
        frames = state_means[lab] + shift + utt_rng.normal(0.0, cfg.noise, size=(T, cfg.feat_dim))
        mel_shift = cfg.speaker_shift * (emb @ mel_shift_map) / math.sqrt(cfg.spk_dim) * 2.0
        logmel = mel_means[lab] + mel_shift + utt_rng.normal(0.0, cfg.mel_noise, size=(T, cfg.mel_bins))
        ivec = emb + utt_rng.normal(0.0, cfg.ivector_noise, size=cfg.spk_dim)
        utts.append(Utterance(f"utt{i:04d}", frames, lab, spk, ivec, seq, {"logmel": logmel}))
    return Corpus(cfg, utts, lexicon, start, trans, embeddings)


# -- features ---------------------------------------------------------------

def compute_deltas(frames: np.ndarray, order: int = 1, window: int = 2) -> np.ndarray:
    """Regression deltas with edge replication.

    Returns ``T x (order * F)``: ``[delta]`` for order 1, ``[delta, delta-delta]``
    for order 2, where delta-delta is the delta of the delta.
    """
    if window < 1:
        raise ConfigError("delta window must be >= 1")
    if order not in (1, 2):
        raise ConfigError("delta order must be 1 or 2")
    x = np.asarray(frames, dtype=np.float64)

    def delta(a):
        T = len(a)
        padded = np.concatenate([np.repeat(a[:1], window, axis=0), a, np.repeat(a[-1:], window, axis=0)])
        num = np.zeros_like(a)
        for n in range(1, window + 1):
            num += n * (padded[window + n:window + n + T] - padded[window - n:window - n + T])
        return num / (2.0 * sum(n * n for n in range(1, window + 1)))

    d1 = delta(x)
    return d1 if order == 1 else np.concatenate([d1, delta(d1)], axis=1)


@dataclass(frozen=True)
class StreamSpec:
    name: str
    dim: int
    delta_order: int = 0

    def __post_init__(self):
        if self.delta_order not in (0, 1, 2):
            raise SpecError(f"{self.name}: delta_order must be 0, 1 or 2")
        if self.dim < 1:
            raise SpecError(f"{self.name}: dim must be >= 1")


@dataclass(frozen=True)
class FeatureSpec:
    streams: tuple[StreamSpec, ...]

    @property
    def fused_dim(self) -> int:
        return sum(s.dim * (s.delta_order + 1) for s in self.streams)

    def to_dict(self) -> list[dict]:
        return [asdict(s) for s in self.streams]

    @classmethod
    def from_dict(cls, items) -> "FeatureSpec":
        return cls(tuple(StreamSpec(**d) for d in items))


def fuse_features(utt: Utterance, spec: FeatureSpec) -> np.ndarray:
    """Concatenate the listed streams (plus deltas) in spec order."""
    parts = []
    for s in spec.streams:
        x = np.asarray(utt.stream(s.name), dtype=np.float64)
        if x.shape[1] != s.dim:
            raise SpecError(f"stream {s.name!r} has dim {x.shape[1]}, spec says {s.dim}")
        parts.append(x)
        if s.delta_order:
            parts.append(compute_deltas(x, s.delta_order))
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def logmel_maps(utt: Utterance, window: int = 2) -> np.ndarray:
    """``3 x mel x T`` input maps (static, delta, delta-delta) for the ResNet."""
    x = utt.stream("logmel")
    dd = compute_deltas(x, 2, window)
    F = x.shape[1]
    return np.stack([x.T, dd[:, :F].T, dd[:, F:].T])


# -- batching ----------------------------------------------------------------

def make_subsequences(x: np.ndarray, length: int = 21) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split along axis 0 into ``ceil(T / length)`` non-overlapping windows.

    The last window is padded by repeating the final frame; its mask is 0 on
    the padding so losses can skip it.
    """
    if length < 1:
        raise ConfigError("subsequence length must be >= 1")
    x = np.asarray(x)
    T = len(x)
    out = []
    for start in range(0, T, length):
        chunk = x[start:start + length]
        real = len(chunk)
        mask = np.zeros(length)
        mask[:real] = 1.0
        if real < length:
            chunk = np.concatenate([chunk, np.repeat(chunk[-1:], length - real, axis=0)])
        out.append((chunk, mask))
    return out


@dataclass(frozen=True)
class BalancingConfig:
    exponent: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.exponent <= 1.0:
            raise ConfigError(f"balancing exponent must be in (0, 1], got {self.exponent}")


def balancing_weights(counts: Mapping | Sequence[float], cfg: BalancingConfig = BalancingConfig()) -> dict:
    """Class sampling probabilities proportional to ``count ** exponent``.

    Classes with zero count are dropped (with a warning).
    """
    items = dict(counts) if isinstance(counts, Mapping) else dict(enumerate(counts))
    zero = [k for k, c in items.items() if c <= 0]
    if zero:
        warnings.warn(f"excluding zero-count classes from balanced sampling: {zero}", stacklevel=2)
    kept = {k: float(c) for k, c in items.items() if c > 0}
    if not kept:
        raise DataError("no class has a positive count")
    w = {k: c ** cfg.exponent for k, c in kept.items()}
    z = sum(w.values())
    return {k: v / z for k, v in w.items()}


def balanced_sampler(counts, cfg: BalancingConfig = BalancingConfig(), seed: int = 0,
                     block: int = 4096) -> Iterator:
    """Endless stream of class keys drawn from :func:`balancing_weights`."""
    probs = balancing_weights(counts, cfg)
    keys = list(probs)
    p = np.array([probs[k] for k in keys])
    rng = np.random.default_rng(seed)
    while True:
        for idx in rng.choice(len(keys), size=block, p=p):
            yield keys[idx]


# -- persistence -----------------------------------------------------------------

def save_corpus(corpus: Corpus, directory) -> Path:
    """Write ``manifest.json`` plus raw little-endian arrays per utterance.

    Frames/streams are float64 (``.f64``), labels int64 (``.i64``), row-major.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for u in corpus.utterances:
        frame_file = f"{u.id}.frames.f64"
        label_file = f"{u.id}.labels.i64"
        (d / frame_file).write_bytes(np.ascontiguousarray(u.frames, dtype="<f8").tobytes())
        (d / label_file).write_bytes(np.ascontiguousarray(u.labels, dtype="<i8").tobytes())
        streams = {}
        for name, arr in sorted(u.streams.items()):
            fname = f"{u.id}.{name}.f64"
            (d / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            streams[name] = {"file": fname, "dim": int(arr.shape[1])}
        entries.append({
            "id": u.id, "speaker": u.speaker_id, "T": u.T, "feat_dim": int(u.frames.shape[1]),
            "frame_file": frame_file, "label_file": label_file, "streams": streams,
            "words": u.words, "speaker_vector": [float(v) for v in u.speaker_vector],
        })
    manifest = {
        "format": CORPUS_FORMAT, "version": CORPUS_VERSION,
        "config": asdict(corpus.config),
        "lexicon": {w: list(s) for w, s in corpus.lexicon.items()},
        "start_probs": corpus.start_probs.tolist(),
        "transitions": corpus.transitions.tolist(),
        "speaker_embeddings": {k: v.tolist() for k, v in sorted(corpus.speaker_embeddings.items())},
        "utterances": entries,
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != CORPUS_FORMAT or manifest.get("version") != CORPUS_VERSION:
        raise FormatError(f"{d}: not a version-{CORPUS_VERSION} corpus manifest")
    cfg_dict = manifest["config"]
    cfg_dict["T_range"] = tuple(cfg_dict["T_range"])
    cfg_dict["dur_range"] = tuple(cfg_dict["dur_range"])
    cfg = CorpusConfig(**cfg_dict)
    utts = []
    for e in manifest["utterances"]:
        T, F = e["T"], e["feat_dim"]
        frames = np.frombuffer((d / e["frame_file"]).read_bytes(), dtype="<f8").reshape(T, F)
        labels = np.frombuffer((d / e["label_file"]).read_bytes(), dtype="<i8")
        streams = {
            name: np.frombuffer((d / s["file"]).read_bytes(), dtype="<f8").reshape(T, s["dim"]).copy()
            for name, s in e["streams"].items()
        }
        utts.append(Utterance(e["id"], frames.copy(), labels.copy(), e["speaker"],
                              np.array(e["speaker_vector"]), list(e["words"]), streams))
    return Corpus(cfg, utts, {w: tuple(s) for w, s in manifest["lexicon"].items()},
                  np.array(manifest["start_probs"]), np.array(manifest["transitions"]),
                  {k: np.array(v) for k, v in manifest["speaker_embeddings"].items()})
