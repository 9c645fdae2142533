"""Small deterministic fixtures shared by the test suite and ``verify``."""
from __future__ import annotations

import numpy as np

from .corpus import FeatureSpec, StreamSpec
from .lstm_am import LstmAcousticModel, LstmAmConfig, Minibatch
from .resnet_am import ResNetConfig, StageSpec, calibrate

TINY_FEATURES = FeatureSpec((StreamSpec("fmllr", 3),))


def tiny_lstm(speaker_dim=2, seed=0, **kw) -> LstmAcousticModel:
    cfg = LstmAmConfig(TINY_FEATURES, n_states=4, n_layers=kw.pop("n_layers", 2), cells_per_layer=kw.pop("cells", 4),
                       bottleneck_dim=3, speaker_dim=speaker_dim, speaker_hidden=3, **kw)
    return LstmAcousticModel(cfg, seed=seed)


def tiny_batch(seed=0, B=2, T=5, F=3, D=2, S=4) -> Minibatch:
    """Random minibatch whose last window has two padded frames."""
    r = np.random.default_rng(seed)
    mask = np.ones((B, T))
    mask[-1, -2:] = 0
    return Minibatch(r.normal(size=(B, T, F)), r.integers(0, S, (B, T)), mask, r.normal(size=(B, D)) * 0.5)


def randomize_bn(model, seed=0) -> None:
    """Give every batch-norm layer non-trivial statistics and offsets."""
    r = np.random.default_rng(seed)
    calibrate(model, r.normal(size=(3, model.config.in_channels, model.config.mel_bins, model.context)))
    for s in model.bn.values():
        s.running_mean = s.running_mean + 0.1 * r.normal(size=s.shape)
        s.running_var = s.running_var * r.uniform(0.5, 2.0, size=s.shape)
    for k, p in model.params.items():
        if k.endswith(".beta"):
            p.data = 0.1 * r.normal(size=p.shape)


def small_resnet_config(seed) -> ResNetConfig:
    """Random small architecture; roughly half are time-strided."""
    r = np.random.default_rng(seed)
    n_stages = int(r.integers(1, 4))
    stages = []
    for i in range(n_stages):
        ts = int(r.integers(1, 3)) if i > 0 else 1
        pool = (1, int(r.integers(1, 3))) if i == n_stages - 1 and r.random() < 0.5 else None
        stages.append(StageSpec(int(r.integers(1, 4)), int(r.integers(1, 3)), str(r.choice(["basic", "bottleneck"])),
                                (int(r.integers(1, 3)), ts), pool))
    return ResNetConfig(tuple(stages), n_states=3, in_channels=2, mel_bins=8, stem_maps=2, stem_kernel=(3, 3),
                        fc=(4,), fc_time=int(r.integers(1, 4)))


def is_time_strided(cfg: ResNetConfig) -> bool:
    return any(s.init_stride[1] > 1 or (s.pool is not None and s.pool[1] > 1) for s in cfg.stages)


def brown_benchmark_family(seed=0, n=100, tokens=500):
    """The declared Brown benchmark: ``(counts, n_classes)`` pairs.

    Vocabulary 3 to 6 words, 2 to ``V - 1`` classes, ``tokens`` bigram events
    walked from a Dirichlet(0.5) random grammar.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        V = int(rng.integers(3, 7))
        C = int(rng.integers(2, V))
        P = rng.dirichlet(np.full(V, 0.5), size=V)
        w = int(rng.integers(V))
        M = np.zeros((V, V))
        for _ in range(tokens):
            x = rng.choice(V, p=P[w])
            M[w, x] += 1
            w = x
        out.append((M, C))
    return out


def alternating_classes(seed, n_sent=20, length=20):
    """Sentences alternating between the classes {x1, x2} and {y1, y2}."""
    rng = np.random.default_rng(seed)
    return [[(["x1", "x2"], ["y1", "y2"])[i % 2][rng.integers(2)] for i in range(length)] for _ in range(n_sent)]
