"""Train both acoustic models on a synthetic corpus, fuse them and score the eval set.

Run: python demos/01_end_to_end.py [seed]
"""
import sys

from convasr.pipeline import ExperimentConfig, run_end_to_end

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = ExperimentConfig(seed=seed)
print("experiment config:")
print(cfg.to_json())

report = run_end_to_end(cfg, log=lambda msg: print("  ..", msg))

m = report.metrics
print(f"eval frame accuracy  LSTM {m['lstm_frame_acc']:.3f}  (lambda=0: {m['lstm_lambda0_frame_acc']:.3f})"
      f"  ResNet {m['resnet_frame_acc']:.3f}")
print(f"speaker probe on the LSTM trunk  lambda=0: {m['probe_lambda0']:.4f}"
      f"  lambda={cfg.sa_mtl_lambda}: {m['probe_lambda']:.4f}")
print(f"fusion weights (LSTM, ResNet) tuned on dev: {report.fusion_weights}")
print(f"eval WER  LSTM {m['wer_lstm']:.2f}  ResNet {m['wer_resnet']:.2f}  fused {m['wer_fused']:.2f}")

ids = sorted(report.hypotheses["fused"])[:3]
for uid in ids:
    print(f"  {uid}: {' '.join(report.hypotheses['fused'][uid])}")

print()
for name, ok in report.checks.items():
    print(f"{'PASS' if ok else 'FAIL'}  {name}")
print(f"total {report.seconds:.0f}s")
