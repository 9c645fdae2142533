"""How much the adversarial speaker loss (lambda=0.1) removes speaker information, across seeds.

The speaker probe is a ridge classifier on trunk activations of held-out
speech. At desk scale the difference is comparable to the spread between
seeds, which this sweep makes visible.

Run: python demos/05_speaker_probe_sweep.py [n_seeds]
"""
import sys

import numpy as np

from convasr import lstm_am
from convasr.pipeline import ExperimentConfig, derive_seed, make_corpus, split_corpus, train_lstm

n = int(sys.argv[1]) if len(sys.argv) > 1 else 6
diffs = []
for seed in range(n):
    cfg = ExperimentConfig(seed=seed)
    corpus = make_corpus(cfg)
    parts = split_corpus(corpus, cfg)
    held = parts["dev"] + parts["eval"]
    acc = {}
    for lam in (0.0, cfg.sa_mtl_lambda):
        model, _ = train_lstm(corpus, parts["train"], cfg, lam)
        acc[lam] = lstm_am.speaker_probe_accuracy(model, held, derive_seed(seed, "probe"), cfg.probe_repeats)
    d = acc[cfg.sa_mtl_lambda] - acc[0.0]
    diffs.append(d)
    print(f"seed {seed}: probe lambda=0 {acc[0.0]:.4f}  lambda={cfg.sa_mtl_lambda} "
          f"{acc[cfg.sa_mtl_lambda]:.4f}  difference {d:+.4f}")
print(f"mean difference {np.mean(diffs):+.4f}, lower in {sum(d < 0 for d in diffs)}/{n} seeds")
