"""Bidirectional LSTM acoustic model with speaker-adversarial multi-task training.

Parameters are split into three disjoint groups by name prefix:

* ``trunk.``   shared BLSTM stack and linear bottleneck
* ``main.``    output layer onto HMM states (the linear layer before softmax)
* ``speaker.`` speaker head: sigmoid layer then tanh layer regressing the
  speaker vector; it reads the last BLSTM layer's output (before the bottleneck)

One SA-MTL step with learning rate ``lr`` and scale ``lam``::

    main    <- main    - lr * dCE/dmain
    speaker <- speaker - lr * dMSE/dspeaker
    trunk   <- trunk   - lr * (dCE/dtrunk - lam * dMSE/dtrunk)
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import gradcore as gc
from .corpus import FeatureSpec, StreamSpec, Utterance, fuse_features, make_subsequences
from .errors import AlignmentError, ConfigError, DataError, SpecError, TrainingError
from .gradcore import Tensor, ops
from .probe import linear_probe_accuracy

SUBSEQUENCE = 21


@dataclass(frozen=True)
class LstmAmConfig:
    features: FeatureSpec
    n_states: int
    n_layers: int = 2
    cells_per_layer: int = 32
    bottleneck_dim: int = 16
    speaker_dim: int = 0
    speaker_hidden: int = 16
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.cells_per_layer % 2:
            raise ConfigError("cells_per_layer must be even (split across directions)")
        for name in ("n_states", "n_layers", "cells_per_layer", "bottleneck_dim", "speaker_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.speaker_dim < 0:
            raise ConfigError("speaker_dim must be >= 0")

    @property
    def input_dim(self) -> int:
        return self.features.fused_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["features"] = self.features.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LstmAmConfig":
        d = dict(d)
        d["features"] = FeatureSpec.from_dict(d["features"])
        return cls(**d)


def default_features(corpus_config, fused: bool = False) -> FeatureSpec:
    """``fmllr + ivector``; with ``fused`` also ``logmel + deltas``."""
    streams = [StreamSpec("fmllr", corpus_config.feat_dim), StreamSpec("ivector", corpus_config.spk_dim)]
    if fused:
        streams.append(StreamSpec("logmel", corpus_config.mel_bins, 2))
    return FeatureSpec(tuple(streams))


class LstmAcousticModel:
    def __init__(self, config: LstmAmConfig, seed: int = 0, params: Mapping[str, np.ndarray] | None = None):
        self.config = config
        self.buffers = {"norm.mean": np.zeros(config.input_dim), "norm.std": np.ones(config.input_dim)}
        if params is None:
            params = _init_params(config, seed)
        self.params: dict[str, Tensor] = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k)
                                          for k, v in sorted(params.items())}

    # -- parameter groups ----------------------------------------------------
    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    @property
    def has_speaker_head(self) -> bool:
        return any(k.startswith("speaker.") for k in self.params)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # -- graph ---------------------------------------------------------------
    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.buffers["norm.mean"]) / self.buffers["norm.std"]

    def graph(self, windows: np.ndarray, with_speaker: bool = True, reverse_lambda: float | None = None):
        """Build the forward graph for ``B x T x F`` (or ``T x F``) raw features.

        Returns ``(logits, trunk, speaker_pred)``; ``speaker_pred`` is None when
        there is no head or ``with_speaker`` is False. ``reverse_lambda`` inserts
        a gradient-reversal node between trunk and speaker head.
        """
        x = np.asarray(windows, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.config.input_dim:
            raise SpecError(f"model expects {self.config.input_dim} input dims, got {x.shape[-1]}")
        B, T, _ = x.shape
        h = Tensor(self.normalize(x))
        for layer in range(self.config.n_layers):
            fw = self._direction(h, f"trunk.l{layer}.fw", reverse=False)
            bw = self._direction(h, f"trunk.l{layer}.bw", reverse=True)
            h = ops.concat([fw, bw], axis=2)
        trunk = h
        H = trunk.shape[-1]
        flat = ops.reshape(trunk, (B * T, H))
        p = self.params
        bottleneck = ops.matmul(flat, p["trunk.bottleneck.W"]) + p["trunk.bottleneck.b"]
        logits = ops.matmul(bottleneck, p["main.W"]) + p["main.b"]
        logits = ops.reshape(logits, (B, T, self.config.n_states))
        spk = None
        if with_speaker and self.has_speaker_head:
            src = flat if reverse_lambda is None else ops.grad_reverse(flat, reverse_lambda)
            s1 = ops.sigmoid(ops.matmul(src, p["speaker.W1"]) + p["speaker.b1"])
            s2 = ops.tanh(ops.matmul(s1, p["speaker.W2"]) + p["speaker.b2"])
            spk = ops.reshape(s2, (B, T, s2.shape[-1]))
        if squeeze:
            logits = ops.reshape(logits, logits.shape[1:])
            trunk = ops.reshape(trunk, trunk.shape[1:])
            spk = None if spk is None else ops.reshape(spk, spk.shape[1:])
        return logits, trunk, spk

    def _direction(self, x: Tensor, prefix: str, reverse: bool) -> Tensor:
        p = self.params
        return ops.lstm(x, p[prefix + ".Wx"], p[prefix + ".Wh"], p[prefix + ".b"], reverse=reverse)

    def forward(self, window: np.ndarray) -> np.ndarray:
        """Per-frame logits for a ``T x F`` window (or ``B x T x F`` batch)."""
        return self.graph(window, with_speaker=False)[0].data

    def log_posteriors(self, utt: Utterance, length: int = SUBSEQUENCE) -> np.ndarray:
        """``T x n_states`` log posteriors, evaluated window by window like training."""
        feats = fuse_features(utt, self.config.features)
        subs = make_subsequences(feats, length)
        logits = self.forward(np.stack([w for w, _ in subs]))
        rows = np.concatenate([lg[m > 0] for lg, (_, m) in zip(logits, subs)])
        return ops._log_softmax(rows)

    def trunk_activations(self, utt: Utterance, length: int = SUBSEQUENCE) -> np.ndarray:
        feats = fuse_features(utt, self.config.features)
        subs = make_subsequences(feats, length)
        trunk = self.graph(np.stack([w for w, _ in subs]), with_speaker=False)[1].data
        return np.concatenate([tr[m > 0] for tr, (_, m) in zip(trunk, subs)])

    # -- persistence ------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.params.items()}
        out.update({"buffer." + k: v for k, v in self.buffers.items()})
        return out

    def save(self, path) -> None:
        path = Path(path)
        gc.save_checkpoint(path, self.state_dict())
        path.with_suffix(".json").write_text(json.dumps(
            {"kind": "lstm_am", "config": self.config.to_dict()}, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "LstmAcousticModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        blob = gc.load_checkpoint(path)
        params = {k: v for k, v in blob.items() if not k.startswith("buffer.")}
        model = cls(LstmAmConfig.from_dict(meta["config"]), params=params)
        for k in model.buffers:
            model.buffers[k] = blob["buffer." + k]
        return model


def _init_params(cfg: LstmAmConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    n = cfg.cells_per_layer // 2
    fan = cfg.input_dim
    for layer in range(cfg.n_layers):
        for d in ("fw", "bw"):
            pre = f"trunk.l{layer}.{d}"
            params[pre + ".Wx"] = uniform(n, (fan, 4 * n))
            params[pre + ".Wh"] = uniform(n, (n, 4 * n))
            b = np.zeros(4 * n)
            b[n:2 * n] = cfg.forget_bias
            params[pre + ".b"] = b
        fan = cfg.cells_per_layer
    H = cfg.cells_per_layer
    params["trunk.bottleneck.W"] = uniform(H, (H, cfg.bottleneck_dim))
    params["trunk.bottleneck.b"] = np.zeros(cfg.bottleneck_dim)
    params["main.W"] = uniform(cfg.bottleneck_dim, (cfg.bottleneck_dim, cfg.n_states))
    params["main.b"] = np.zeros(cfg.n_states)
    if cfg.speaker_dim:
        # separate stream so adding the head leaves the main-path init unchanged
        srng = np.random.default_rng([seed, 1])
        b1 = 1.0 / math.sqrt(H)
        b2 = 1.0 / math.sqrt(cfg.speaker_hidden)
        params["speaker.W1"] = srng.uniform(-b1, b1, size=(H, cfg.speaker_hidden))
        params["speaker.b1"] = np.zeros(cfg.speaker_hidden)
        params["speaker.W2"] = srng.uniform(-b2, b2, size=(cfg.speaker_hidden, cfg.speaker_dim))
        params["speaker.b2"] = np.zeros(cfg.speaker_dim)
    return params


def discard_speaker_head(model: LstmAcousticModel) -> LstmAcousticModel:
    """Inference copy without the ``speaker.`` parameters."""
    cfg = replace(model.config, speaker_dim=0)
    params = {k: v.data.copy() for k, v in model.params.items() if not k.startswith("speaker.")}
    out = LstmAcousticModel(cfg, params=params)
    out.buffers = {k: v.copy() for k, v in model.buffers.items()}
    return out


# -- SA-MTL update ------------------------------------------------------------------

@dataclass
class Minibatch:
    features: np.ndarray        # B x T x F raw fused features
    labels: np.ndarray          # B x T
    mask: np.ndarray            # B x T
    speaker_vectors: np.ndarray | None = None   # B x D_s (one per window)

    def speaker_targets(self) -> np.ndarray:
        if self.speaker_vectors is None:
            raise DataError("minibatch has no speaker vectors")
        B, T = self.labels.shape
        return np.broadcast_to(self.speaker_vectors[:, None, :], (B, T, self.speaker_vectors.shape[1]))


def losses(model: LstmAcousticModel, batch: Minibatch, reverse_lambda: float | None = None):
    logits, _, spk = model.graph(batch.features, reverse_lambda=reverse_lambda)
    ce = gc.softmax_cross_entropy(logits, batch.labels, batch.mask)
    mse = None if spk is None else gc.mse(spk, batch.speaker_targets(), batch.mask)
    return ce, mse


def sa_mtl_step(model: LstmAcousticModel, batch: Minibatch, lam: float, lr: float) -> tuple[float, float]:
    """One speaker-adversarial SGD step in place; returns ``(L_CE, L_MSE)``.

    Runs one forward pass and one backward pass per loss.
    """
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    if not model.has_speaker_head:
        raise ConfigError("model has no speaker head")
    ce, mse = losses(model, batch)
    trunk, main, speaker = model.group("trunk"), model.group("main"), model.group("speaker")
    ce_names = list(trunk) + list(main)
    mse_names = list(trunk) + list(speaker)
    g_ce = dict(zip(ce_names, gc.grad(ce, [model.params[k] for k in ce_names])))
    g_mse = dict(zip(mse_names, gc.grad(mse, [model.params[k] for k in mse_names])))
    for k, p in main.items():
        p.data = p.data - lr * g_ce[k]
    for k, p in speaker.items():
        p.data = p.data - lr * g_mse[k]
    for k, p in trunk.items():
        p.data = p.data - lr * (g_ce[k] - lam * g_mse[k])
    return ce.item(), mse.item()


def gradient_reversal_step(model: LstmAcousticModel, batch: Minibatch, lam: float, lr: float) -> float:
    """Same update as :func:`sa_mtl_step` via one combined graph.

    The speaker head reads the trunk through a gradient-reversal node scaled by
    ``lam``; the summed loss is differentiated once and every parameter takes a
    plain SGD step.
    """
    ce, mse = losses(model, batch, reverse_lambda=lam)
    total = ce + mse
    names = list(model.params)
    grads = gc.grad(total, [model.params[k] for k in names])
    for k, g in zip(names, grads):
        model.params[k].data = model.params[k].data - lr * g
    return total.item()


def ce_step(model: LstmAcousticModel, batch: Minibatch, optimizer: gc.Optimizer) -> float:
    logits, _, _ = model.graph(batch.features, with_speaker=False)
    ce = gc.softmax_cross_entropy(logits, batch.labels, batch.mask)
    names = [k for k in model.params if not k.startswith("speaker.")]
    grads = dict(zip(names, gc.grad(ce, [model.params[k] for k in names])))
    gc.step({k: model.params[k] for k in names}, grads, optimizer.state)
    return ce.item()


# -- forced alignment ------------------------------------------------------------------

def forced_align(log_probs: np.ndarray, states: Sequence[int]) -> np.ndarray:
    """Viterbi alignment of ``T`` frames to a left-to-right state sequence.

    Each state occupies at least one frame. Among equally good paths the one
    whose transitions happen earliest (lexicographically smallest boundary
    frames) wins.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T, N = len(lp), len(states)
    if N == 0:
        raise AlignmentError("empty state sequence")
    if T < N:
        raise AlignmentError(f"{T} frames cannot cover {N} states (minimum duration 1)")
    emit = lp[:, list(states)]
    best = np.full((T, N), -np.inf)   # best score of frames t.. given state j at t
    best[T - 1, N - 1] = emit[T - 1, N - 1]
    for t in range(T - 2, -1, -1):
        nxt = best[t + 1]
        cont = np.maximum(nxt, np.append(nxt[1:], -np.inf))
        best[t] = emit[t] + cont
    if not np.isfinite(best[0, 0]):
        raise AlignmentError("no finite-score alignment")
    out = np.empty(T, dtype=np.int64)
    j = 0
    out[0] = states[0]
    for t in range(1, T):
        if j + 1 < N and best[t, j + 1] >= best[t, j]:
            j += 1
        out[t] = states[j]
    return out


def expand_words(words: Sequence[str], lexicon: Mapping[str, Sequence[int]]) -> list[int]:
    missing = [w for w in words if w not in lexicon]
    if missing:
        raise AlignmentError(f"words not in lexicon: {missing}")
    return [s for w in words for s in lexicon[w]]


def realign(model: LstmAcousticModel, utt: Utterance, lexicon: Mapping[str, Sequence[int]]) -> np.ndarray:
    """New frame labels for ``utt`` from the model's posteriors and its word sequence."""
    logp = np.maximum(model.log_posteriors(utt), np.log(1e-30))
    return forced_align(logp, expand_words(utt.words, lexicon))


# -- training ------------------------------------------------------------------------------

@dataclass(frozen=True)
class LstmSchedule:
    epochs: int = 8
    learning_rate: float = 0.5
    lam: float = 0.0
    batch_size: int = 8
    subsequence: int = SUBSEQUENCE
    seed: int = 0
    optimizer: str = "sgd"      # used only for models without a speaker head
    momentum: float = 0.9

    @classmethod
    def from_json(cls, path) -> "LstmSchedule":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    speaker_losses: list[float] = field(default_factory=list)


def build_windows(model: LstmAcousticModel, utts: Sequence[Utterance], length: int):
    feats, labels, masks, spk = [], [], [], []
    for u in utts:
        f = fuse_features(u, model.config.features)
        for (fw, m), (lw, _) in zip(make_subsequences(f, length), make_subsequences(u.labels, length)):
            feats.append(fw)
            labels.append(lw)
            masks.append(m)
            spk.append(u.speaker_vector)
    return np.stack(feats), np.stack(labels), np.stack(masks), np.stack(spk)


def fit_normalizer(model: LstmAcousticModel, utts: Sequence[Utterance]) -> None:
    allf = np.concatenate([fuse_features(u, model.config.features) for u in utts])
    model.buffers["norm.mean"] = allf.mean(axis=0)
    model.buffers["norm.std"] = allf.std(axis=0) + 1e-6


def train(model: LstmAcousticModel, utts: Sequence[Utterance], schedule: LstmSchedule) -> TrainResult:
    """Cross-entropy training (SA-MTL when the model has a speaker head).

    Windows are reshuffled each epoch from ``schedule.seed``; the per-epoch
    mean loss is recorded.
    """
    fit_normalizer(model, utts)
    X, Y, M, S = build_windows(model, utts, schedule.subsequence)
    rng = np.random.default_rng(schedule.seed)
    result = TrainResult()
    optimizer = None
    if not model.has_speaker_head:
        optimizer = gc.Optimizer({}, gc.OptimizerConfig(schedule.optimizer, schedule.learning_rate,
                                                         momentum=schedule.momentum))
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(X))
        ce_sum = mse_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start:start + schedule.batch_size]
            batch = Minibatch(X[idx], Y[idx], M[idx], S[idx])
            if optimizer is None:
                ce, mse = sa_mtl_step(model, batch, schedule.lam, schedule.learning_rate)
            else:
                ce, mse = ce_step(model, batch, optimizer), 0.0
            if not math.isfinite(ce) or not math.isfinite(mse):
                raise TrainingError(f"loss diverged (NaN/Inf) in epoch {epoch}")
            ce_sum += ce
            mse_sum += mse
            n_batches += 1
        result.losses.append(ce_sum / n_batches)
        result.speaker_losses.append(mse_sum / n_batches)
    return result


def frame_accuracy(model: LstmAcousticModel, utts: Sequence[Utterance]) -> float:
    hits = total = 0
    for u in utts:
        pred = model.log_posteriors(u).argmax(axis=1)
        hits += int((pred == u.labels).sum())
        total += u.T
    return hits / total


def speaker_probe_accuracy(model: LstmAcousticModel, utts: Sequence[Utterance], seed: int = 0,
                           repeats: int = 1) -> float:
    """Held-out linear-probe accuracy for speaker identity from trunk activations.

    With ``repeats > 1`` the accuracy is averaged over probe splits
    ``seed, seed + 1, ...`` to reduce split noise.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    acts = np.concatenate([model.trunk_activations(u) for u in utts])
    spk = np.concatenate([[u.speaker_id] * u.T for u in utts])
    return float(np.mean([linear_probe_accuracy(acts, spk, seed=seed + r) for r in range(repeats)]))
