"""End-to-end synthetic experiment: corpus, two acoustic models, fusion, decoding, WER.

Every random choice derives from ``ExperimentConfig.seed``: the corpus uses
the root seed directly, each model gets ``derive_seed(seed, name)``.
"""
from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import lstm_am, resnet_am
from .corpus import Corpus, CorpusConfig, Utterance, synth_corpus
from .decode_fusion import (
    Bigram,
    DecodeConfig,
    FrameScores,
    fuse,
    tune_weights,
    viterbi_decode,
)
from .errors import ConfigError
from .scoring.align import corpus_wer


def derive_seed(root: int, name: str) -> int:
    """Stable child seed for component ``name``."""
    return int(np.random.SeedSequence([root, zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """Everything a run needs; written verbatim into each run directory."""

    seed: int = 0
    corpus: dict[str, Any] = field(default_factory=dict)        # CorpusConfig overrides
    splits: tuple[float, float, float] = (0.7, 0.15, 0.15)
    lstm_model: dict[str, Any] = field(default_factory=lambda: {"cells_per_layer": 32, "bottleneck_dim": 16})
    lstm_schedule: dict[str, Any] = field(default_factory=lambda: {"epochs": 15, "learning_rate": 1.0,
                                                                   "batch_size": 8})
    sa_mtl_lambda: float = 0.1
    probe_repeats: int = 5
    resnet_schedule: dict[str, Any] = field(default_factory=lambda: {"epochs": 10, "steps_per_epoch": 40,
                                                                     "batch_size": 32, "learning_rate": 0.03})
    fusion_pooling: str = "log-linear"
    fusion_grid: tuple[float, ...] = tuple(i / 10 for i in range(11))
    decode: dict[str, Any] = field(default_factory=dict)        # DecodeConfig fields
    lm: dict[str, Any] = field(default_factory=lambda: {"order": 3, "discount": 0.7, "n_general": 600,
                                                        "n_domain": 200, "n_heldout": 100, "epochs": 4})
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.splits = tuple(self.splits)
        self.fusion_grid = tuple(self.fusion_grid)
        self.corpus = {k: tuple(v) if k in ("T_range", "dur_range") else v for k, v in self.corpus.items()}
        if len(self.splits) != 3 or min(self.splits) <= 0:
            raise ConfigError(f"splits must be three positive fractions, got {self.splits}")
        if self.sa_mtl_lambda < 0:
            raise ConfigError("sa_mtl_lambda must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def corpus_config(self) -> CorpusConfig:
        return CorpusConfig(**{"seed": self.seed, **self.corpus})

    def lstm_schedule_for(self, lam: float) -> lstm_am.LstmSchedule:
        # same shuffle order for every lambda so comparisons isolate the adversarial term
        return lstm_am.LstmSchedule(**{**self.lstm_schedule, "lam": lam,
                                       "seed": derive_seed(self.seed, "lstm-schedule")})

    def resnet_schedule_obj(self) -> resnet_am.ResNetSchedule:
        return resnet_am.ResNetSchedule(**{**self.resnet_schedule, "seed": derive_seed(self.seed, "resnet-schedule")})

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(**self.decode)


# -- building blocks shared with the CLI -----------------------------------------------

def make_corpus(cfg: ExperimentConfig) -> Corpus:
    return synth_corpus(cfg.corpus_config())


def split_corpus(corpus: Corpus, cfg: ExperimentConfig) -> dict[str, list[Utterance]]:
    return dict(zip(("train", "dev", "eval"), corpus.split(cfg.splits)))


def train_lstm(corpus: Corpus, utts: Sequence[Utterance], cfg: ExperimentConfig, lam: float):
    """BLSTM with a speaker head; ``lam = 0`` trains the head without reversal."""
    model_cfg = lstm_am.LstmAmConfig(lstm_am.default_features(corpus.config), corpus.n_states,
                                     speaker_dim=corpus.config.spk_dim, **cfg.lstm_model)
    model = lstm_am.LstmAcousticModel(model_cfg, seed=derive_seed(cfg.seed, "lstm-init"))
    result = lstm_am.train(model, utts, cfg.lstm_schedule_for(lam))
    return model, result


def train_resnet(corpus: Corpus, utts: Sequence[Utterance], cfg: ExperimentConfig):
    model = resnet_am.build(resnet_am.desk_preset(corpus.config.mel_bins, corpus.n_states),
                            seed=derive_seed(cfg.seed, "resnet-init"))
    result = resnet_am.train(model, utts, cfg.resnet_schedule_obj())
    return model, result


def frame_scores(model, utts: Sequence[Utterance], model_id: str) -> list[FrameScores]:
    """Per-utterance log posteriors; windowed ResNets are converted to dense first."""
    if isinstance(model, resnet_am.ResNetAcousticModel):
        model = resnet_am.to_dilated(model)
    return [FrameScores(model.log_posteriors(u), model_id, u.id) for u in utts]


def decoder_lm(corpus: Corpus, utts: Sequence[Utterance]) -> Bigram:
    return Bigram.from_sentences([u.words for u in utts], sorted(corpus.lexicon))


def decode_all(scores: Sequence[FrameScores], corpus: Corpus, lm: Bigram, dcfg: DecodeConfig) -> list[list[str]]:
    return [viterbi_decode(s, corpus.lexicon, lm, dcfg).words for s in scores]


# -- the full run ---------------------------------------------------------------------------

@dataclass
class EndToEndReport:
    metrics: dict[str, float]
    checks: dict[str, bool]
    fusion_weights: tuple[float, ...]
    seconds: float
    hypotheses: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        return json.dumps({"metrics": self.metrics, "checks": self.checks,
                           "fusion_weights": list(self.fusion_weights), "seconds": self.seconds},
                          indent=1, sort_keys=True) + "\n"


def run_end_to_end(cfg: ExperimentConfig | None = None, log=None) -> EndToEndReport:
    """Train both acoustic models, fuse them, decode eval and check the desk targets.

    Targets: LSTM frame accuracy >= 0.90, ResNet >= 0.85, fused WER within
    0.5 points of the best single system, and a lower trunk speaker-probe
    accuracy with the adversarial speaker loss than without it.
    """
    cfg = cfg or ExperimentConfig()
    say = log or (lambda msg: None)
    t0 = time.perf_counter()
    corpus = make_corpus(cfg)
    parts = split_corpus(corpus, cfg)
    train_u, dev_u, eval_u = parts["train"], parts["dev"], parts["eval"]

    lstm0, _ = train_lstm(corpus, train_u, cfg, 0.0)
    say("trained LSTM lambda=0")
    lstm1, _ = train_lstm(corpus, train_u, cfg, cfg.sa_mtl_lambda)
    say(f"trained LSTM lambda={cfg.sa_mtl_lambda}")
    resnet, _ = train_resnet(corpus, train_u, cfg)
    say("trained ResNet")

    # probe on all held-out speech, averaged over several splits
    probe_seed = derive_seed(cfg.seed, "probe")
    held = dev_u + eval_u
    metrics = {
        "lstm_frame_acc": lstm_am.frame_accuracy(lstm1, eval_u),
        "lstm_lambda0_frame_acc": lstm_am.frame_accuracy(lstm0, eval_u),
        "resnet_frame_acc": resnet_am.frame_accuracy(resnet, eval_u),
        "probe_lambda0": lstm_am.speaker_probe_accuracy(lstm0, held, probe_seed, cfg.probe_repeats),
        "probe_lambda": lstm_am.speaker_probe_accuracy(lstm1, held, probe_seed, cfg.probe_repeats),
    }

    lm = decoder_lm(corpus, train_u)
    dcfg = cfg.decode_config()
    refs = [u.words for u in eval_u]

    def dec(s: FrameScores) -> list[str]:
        return viterbi_decode(s, corpus.lexicon, lm, dcfg).words

    systems = {"lstm": lstm1, "resnet": resnet}
    dev_scores = {k: frame_scores(m, dev_u, k) for k, m in systems.items()}
    eval_scores = {k: frame_scores(m, eval_u, k) for k, m in systems.items()}
    fusion, dev_wer = tune_weights([list(p) for p in zip(dev_scores["lstm"], dev_scores["resnet"])],
                                   [u.words for u in dev_u], dec, cfg.fusion_grid, cfg.fusion_pooling)
    say(f"tuned fusion weights {fusion.weights} (dev WER {dev_wer:.2f})")
    hyps = {k: [dec(s) for s in v] for k, v in eval_scores.items()}
    hyps["fused"] = [dec(fuse([a, b], fusion)) for a, b in zip(eval_scores["lstm"], eval_scores["resnet"])]
    for k, h in hyps.items():
        metrics[f"wer_{k}"] = corpus_wer(refs, h)
    metrics["dev_wer_fused"] = dev_wer
    seconds = time.perf_counter() - t0
    best_single = min(metrics["wer_lstm"], metrics["wer_resnet"])
    checks = {
        "lstm_frame_acc>=0.90": metrics["lstm_frame_acc"] >= 0.90 and metrics["lstm_lambda0_frame_acc"] >= 0.90,
        "resnet_frame_acc>=0.85": metrics["resnet_frame_acc"] >= 0.85,
        "fused_wer<=best+0.5": metrics["wer_fused"] <= best_single + 0.5,
        "probe_lambda<probe_0": metrics["probe_lambda"] < metrics["probe_lambda0"],
        "runtime<15min": seconds < 15 * 60,
    }
    named = {k: {u.id: h for u, h in zip(eval_u, v)} for k, v in hyps.items()}
    return EndToEndReport(metrics, checks, fusion.weights, seconds, named)
