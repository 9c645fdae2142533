"""A windowed ResNet evaluated frame by frame equals its dilated copy run once per utterance.

Run: python demos/02_dense_prediction.py
"""
import time

import numpy as np

from convasr.resnet_am import (
    build,
    column_spec,
    max_single_output_window,
    parameter_count,
    receptive_field,
    time_trace,
    to_dilated,
)
from convasr.testing import randomize_bn

# full-scale geometry: no weights are allocated for these numbers
for col in "abcd":
    cfg = column_spec(col)
    print(f"column {col}: {parameter_count(cfg) / 1e6:6.2f}M parameters, receptive field "
          f"{receptive_field(cfg)}, longest single-output window {max_single_output_window(cfg)}")

print("\ntime axis through column (d) for its 76-frame window:")
for name, T in time_trace(column_spec("d"), 76)[::4]:
    print(f"  {name:<24} T={T}")

# a narrow column (d) analog with real weights and non-trivial batch-norm statistics
model = build(column_spec("d", 8, n_states=20), seed=1)
randomize_bn(model)
dense = to_dilated(model)
ctx = model.context
x = np.random.default_rng(0).normal(size=(model.config.in_channels, model.config.mel_bins, ctx + 40))

t0 = time.perf_counter()
windows = np.stack([x[:, :, t:t + ctx] for t in range(41)])
slow = model.forward_window(windows)
t1 = time.perf_counter()
fast = dense.forward_dense(x)
t2 = time.perf_counter()

print(f"\ncontext {ctx} frames, {len(slow)} outputs")
print(f"sliding windows {t1 - t0:.2f}s, dilated single pass {t2 - t1:.2f}s")
print(f"max |difference| = {np.abs(fast - slow).max():.2e}")
