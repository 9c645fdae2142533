"""Word-LSTM, Char-LSTM (each optionally with a class-prediction task) and Word-DCC.

All three share the output stack and the training loop; they differ in how a
sequence of word ids becomes the top-layer features:

* Word-LSTM: embedding, LSTM, LSTM with a residual wrap, residual ReLU layer.
* Char-LSTM: the embedding table is the final state of a character LSTM run
  over each vocabulary word's spelling, recomputed on every forward pass.
* Word-DCC: embedding, residual blocks of left-padded dilated convolutions,
  a residual 1x1 convolution, then a ReLU layer.

Dropout acts only between layers (never on recurrent state). With a class
map, a second softmax predicts the next word's class and the training loss is
``CE(word) + mtl_weight * CE(class)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .. import gradcore as gc
from ..errors import ConfigError, DataError, TrainingError
from ..gradcore import Tensor, ops
from .base import LmScorer
from .vocab import SPECIALS, Vocab

ARCHS = ("word_lstm", "char_lstm", "word_dcc")


@dataclass(frozen=True)
class NeuralLmConfig:
    arch: str = "word_lstm"
    embed_dim: int = 16
    hidden: int = 32
    char_dim: int = 8
    dropout: float = 0.0
    dilations: tuple[int, ...] = (1, 2, 4)
    kernel: int = 2
    mtl_weight: float = 0.5

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        for name in ("embed_dim", "hidden", "char_dim", "kernel"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 <= self.mtl_weight <= 1.0:
            raise ConfigError("mtl_weight must lie in [0, 1]")
        if not self.dilations or min(self.dilations) < 1:
            raise ConfigError("dilations must be a non-empty tuple of positive ints")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))

    @property
    def receptive_field(self) -> int:
        """Number of input positions (current one included) a DCC output can see."""
        return 1 + sum(d * (self.kernel - 1) for d in self.dilations)


@dataclass(frozen=True)
class LmSchedule:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError(f"invalid LM schedule {self}")


@dataclass
class LmTrainResult:
    losses: list[float] = field(default_factory=list)


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _lstm_params(rng, prefix, fan_in, n, forget_bias=1.0) -> dict[str, np.ndarray]:
    b = np.zeros(4 * n)
    b[n:2 * n] = forget_bias
    return {prefix + ".Wx": _uniform(rng, n, (fan_in, 4 * n)), prefix + ".Wh": _uniform(rng, n, (n, 4 * n)),
            prefix + ".b": b}


def _affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` over the last axis of a 3-D tensor."""
    B, T, F = x.shape
    return ops.reshape(ops.matmul(ops.reshape(x, (B * T, F)), W) + b, (B, T, W.shape[1]))


class NeuralLM(LmScorer):
    def __init__(self, vocab: Vocab, config: NeuralLmConfig, seed: int = 0,
                 class_map: Mapping[str, int] | None = None, params: Mapping[str, np.ndarray] | None = None):
        self.vocab = vocab
        self.config = config
        self.seed = seed
        self.class_map = dict(class_map) if class_map is not None else None
        self.word_class = self._class_ids(vocab, self.class_map)
        if config.arch == "char_lstm":
            self.alphabet, self.spellings, self.spelling_mask = _spell(vocab)
        arrays = dict(params) if params is not None else self._init_params(seed)
        self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}

    # -- identity ----------------------------------------------------------------------
    @property
    def kind(self) -> str:
        return self.config.arch + ("_mtl" if self.class_map is not None else "")

    @property
    def n_classes(self) -> int:
        return 0 if self.word_class is None else int(self.word_class.max()) + 1

    @staticmethod
    def _class_ids(vocab: Vocab, class_map):
        if class_map is None:
            return None
        missing = [w for w in vocab.words if w not in SPECIALS and w not in class_map]
        if missing:
            raise ConfigError(f"class map lacks vocabulary word(s): {missing[:5]}")
        n = max(class_map.values()) + 1 if class_map else 0
        # the three specials share one extra class
        return np.array([n if w in SPECIALS else int(class_map[w]) for w in vocab.words], dtype=np.int64)

    # -- parameters ------------------------------------------------------------------
    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        cfg, V = self.config, len(self.vocab)
        rng = np.random.default_rng(seed)
        d, H = cfg.embed_dim, cfg.hidden
        p: dict[str, np.ndarray] = {}
        if cfg.arch == "char_lstm":
            p["char.E"] = rng.normal(0.0, 1.0, size=(len(self.alphabet), cfg.char_dim))
            p.update(_lstm_params(rng, "char.lstm", cfg.char_dim, d))
        else:
            p["embed.E"] = rng.normal(0.0, 1.0, size=(V, d))
        if cfg.arch == "word_dcc":
            for i, _ in enumerate(cfg.dilations):
                p[f"dcc.b{i}.K"] = _uniform(rng, d * cfg.kernel, (d, d, 1, cfg.kernel))
                p[f"dcc.b{i}.c"] = np.zeros(d)
            p["dcc.mix.K"] = _uniform(rng, d, (d, d, 1, 1))
            p["dcc.mix.c"] = np.zeros(d)
            p["fc.W"] = _uniform(rng, d, (d, H))
            p["fc.b"] = np.zeros(H)
        else:
            p.update(_lstm_params(rng, "lstm0", d, H))
            p.update(_lstm_params(rng, "lstm1", H, H))
            p["fc.W"] = _uniform(rng, H, (H, H))
            p["fc.b"] = np.zeros(H)
        p["out.W"] = _uniform(rng, H, (H, V))
        p["out.b"] = np.zeros(V)
        if self.word_class is not None:
            # separate stream: the shared parameters match the plain model's
            crng = np.random.default_rng([seed, 1])
            p["cls.W"] = _uniform(crng, H, (H, self.n_classes))
            p["cls.b"] = np.zeros(self.n_classes)
        return p

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    # -- graph ------------------------------------------------------------------------
    def embedding_table(self, params: Mapping[str, Tensor] | None = None) -> Tensor:
        p = params or self.params
        if self.config.arch != "char_lstm":
            return p["embed.E"]
        chars = ops.embedding(p["char.E"], self.spellings)           # V x L x c
        states = ops.lstm(chars, p["char.lstm.Wx"], p["char.lstm.Wh"], p["char.lstm.b"], mask=self.spelling_mask)
        return states[:, -1, :]

    def graph(self, ids: np.ndarray, params: Mapping[str, Tensor] | None = None,
              rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor | None]:
        """Word logits (and class logits with MTL) for ``B x T`` input ids."""
        p = params or self.params
        cfg = self.config
        ids = np.asarray(ids, dtype=np.int64)
        B, T = ids.shape
        rate = cfg.dropout

        def drop(x):
            return ops.dropout(x, rate, rng)

        x = drop(ops.embedding(self.embedding_table(p), ids))               # B x T x d
        if cfg.arch == "word_dcc":
            y = ops.reshape(ops.transpose(x, (0, 2, 1)), (B, cfg.embed_dim, 1, T))
            k = cfg.kernel
            for i, dil in enumerate(cfg.dilations):
                z = ops.conv2d(ops.pad_time_left(y, dil * (k - 1)), p[f"dcc.b{i}.K"], p[f"dcc.b{i}.c"],
                               time_dilation=dil)
                y = y + drop(ops.relu(z))
            y = y + drop(ops.relu(ops.conv2d(y, p["dcc.mix.K"], p["dcc.mix.c"])))
            y = ops.transpose(ops.reshape(y, (B, cfg.embed_dim, T)), (0, 2, 1))
            top = drop(ops.relu(_affine(y, p["fc.W"], p["fc.b"])))
        else:
            h1 = ops.lstm(x, p["lstm0.Wx"], p["lstm0.Wh"], p["lstm0.b"])
            h2 = h1 + ops.lstm(drop(h1), p["lstm1.Wx"], p["lstm1.Wh"], p["lstm1.b"])
            f = h2 + ops.relu(_affine(drop(h2), p["fc.W"], p["fc.b"]))
            top = drop(f)
        logits = _affine(top, p["out.W"], p["out.b"])
        cls = _affine(top, p["cls.W"], p["cls.b"]) if "cls.W" in p else None
        return logits, cls

    def loss(self, inputs: np.ndarray, targets: np.ndarray, mask: np.ndarray,
             params: Mapping[str, Tensor] | None = None, rng: np.random.Generator | None = None) -> Tensor:
        logits, cls = self.graph(inputs, params, rng)
        total = ops.softmax_cross_entropy(logits, targets, mask)
        if cls is not None:
            class_ce = ops.softmax_cross_entropy(cls, self.word_class[targets], mask)
            total = total + ops.scale(class_ce, self.config.mtl_weight)
        return total

    # -- scoring ----------------------------------------------------------------------
    def _log_softmax_rows(self, ids: np.ndarray) -> np.ndarray:
        logits, _ = self.graph(ids)
        return ops._log_softmax(logits.data)

    def distribution(self, history: Sequence[int]) -> np.ndarray:
        ids = np.array([[self.vocab.bos, *history]], dtype=np.int64)
        return np.exp(self._log_softmax_rows(ids)[0, -1])

    def token_log_probs(self, words: Sequence[str]) -> np.ndarray:
        return self.score_sentences([words])[0]

    def score_sentences(self, sentences: Sequence[Sequence[str]]) -> list[np.ndarray]:
        if not sentences:
            return []
        inputs, targets, mask = batch_arrays(self.vocab, sentences)
        lp = self._log_softmax_rows(inputs)
        picked = np.take_along_axis(lp, targets[..., None], axis=2)[..., 0]
        return [picked[i, :int(mask[i].sum())].copy() for i in range(len(sentences))]

    # -- persistence ------------------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        gc.save_checkpoint(path, self.params)
        meta = {"config": asdict(self.config), "vocab": self.vocab.words, "seed": self.seed,
                "class_map": self.class_map}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, path) -> "NeuralLM":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        cfg = meta["config"]
        cfg["dilations"] = tuple(cfg["dilations"])
        return cls(Vocab(meta["vocab"]), NeuralLmConfig(**cfg), meta["seed"], meta["class_map"],
                   gc.load_checkpoint(path))

    # -- training ----------------------------------------------------------------------
    def fit(self, sentences: Sequence[Sequence[str]], schedule: LmSchedule = LmSchedule(),
            optimizer: gc.Optimizer | None = None) -> LmTrainResult:
        """Adam on mini-batches; calling again continues training (second stage)."""
        if not sentences:
            raise DataError("empty corpus")
        opt = optimizer or gc.Optimizer(self.params, gc.OptimizerConfig("adam", schedule.learning_rate))
        rng = np.random.default_rng([schedule.seed, 2])
        names = sorted(self.params)
        result = LmTrainResult()
        for epoch in range(schedule.epochs):
            order = rng.permutation(len(sentences))
            total, count = 0.0, 0
            for start in range(0, len(order), schedule.batch_size):
                batch = [sentences[i] for i in order[start:start + schedule.batch_size]]
                inputs, targets, mask = batch_arrays(self.vocab, batch)
                loss = self.loss(inputs, targets, mask, rng=rng)
                grads = gc.grad(loss, [self.params[n] for n in names])
                opt.step(dict(zip(names, grads)))
                total += loss.item() * mask.sum()
                count += mask.sum()
            mean = total / count
            if not math.isfinite(mean):
                raise TrainingError(f"LM loss became non-finite in epoch {epoch}")
            result.losses.append(mean)
        return result


def _spell(vocab: Vocab) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Character ids (left aligned, padded) and masks for every vocabulary word."""
    for w in vocab.words:
        if not w:
            raise DataError("empty word string has no character decomposition")
    alphabet = sorted({ch for w in vocab.words for ch in w})
    index = {ch: i for i, ch in enumerate(alphabet)}
    L = max(len(w) for w in vocab.words)
    ids = np.zeros((len(vocab), L), dtype=np.int64)
    mask = np.zeros((len(vocab), L))
    for i, w in enumerate(vocab.words):
        ids[i, :len(w)] = [index[ch] for ch in w]
        mask[i, :len(w)] = 1
    return alphabet, ids, mask


def batch_arrays(vocab: Vocab, sentences: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs ``<s> w1 .. wn``, targets ``w1 .. wn </s>`` and a padding mask."""
    encoded = [vocab.encode(s) for s in sentences]
    T = max(len(e) for e in encoded) + 1
    inputs = np.full((len(encoded), T), vocab.eos, dtype=np.int64)
    targets = np.full((len(encoded), T), vocab.eos, dtype=np.int64)
    mask = np.zeros((len(encoded), T))
    for i, e in enumerate(encoded):
        inputs[i, :len(e) + 1] = [vocab.bos, *e]
        targets[i, :len(e) + 1] = [*e, vocab.eos]
        mask[i, :len(e) + 1] = 1
    return inputs, targets, mask


def _train(arch: str, sentences, config: NeuralLmConfig | None, schedule: LmSchedule,
           class_map, vocab: Vocab | None) -> tuple[NeuralLM, LmTrainResult]:
    cfg = config or NeuralLmConfig(arch=arch)
    if cfg.arch != arch:
        cfg = NeuralLmConfig(**{**asdict(cfg), "arch": arch})
    vocab = vocab or Vocab.build(sentences)
    model = NeuralLM(vocab, cfg, schedule.seed, class_map)
    return model, model.fit(sentences, schedule)


def train_word_lstm(sentences, config: NeuralLmConfig | None = None, schedule: LmSchedule = LmSchedule(),
                    class_map: Mapping[str, int] | None = None, vocab: Vocab | None = None):
    return _train("word_lstm", sentences, config, schedule, class_map, vocab)


def train_char_lstm(sentences, config: NeuralLmConfig | None = None, schedule: LmSchedule = LmSchedule(),
                    class_map: Mapping[str, int] | None = None, vocab: Vocab | None = None):
    return _train("char_lstm", sentences, config, schedule, class_map, vocab)


def train_word_dcc(sentences, config: NeuralLmConfig | None = None, schedule: LmSchedule = LmSchedule(),
                   vocab: Vocab | None = None):
    return _train("word_dcc", sentences, config, schedule, None, vocab)
