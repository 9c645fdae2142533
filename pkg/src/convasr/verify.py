"""The acceptance suite as a library: each check returns a pass/fail line.

Run through ``convasr verify``; the exit status is nonzero when any check fails.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import gradcore as gc
from .gradcore import Tensor, grad_check, ops, softmax_cross_entropy

FIXTURES = Path(__file__).parent / "fixtures"


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} [{self.seconds:.1f}s]"


def _budget(seconds: float, limit: float) -> tuple[bool, str]:
    return seconds < limit, f"runtime {seconds:.1f}s < {limit:.0f}s"


# -- gradients ------------------------------------------------------------------------------

def _op_cases(rng) -> list[tuple[str, Callable, list[np.ndarray], float]]:
    a = rng.normal(size=(3, 5))
    a[np.abs(a) < 0.05] = 0.3          # keep relu off its kink
    b = rng.normal(size=(3, 5))
    m1, m2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    v4, v3 = rng.normal(size=(4, 3)), rng.normal(size=(3,))
    logits, labels = rng.normal(size=(5, 3)), np.array([0, 2, 1, 1, 0])
    pred, target = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    ids = np.array([1, 1, 3, 0])
    conv_x, conv_w, conv_b = rng.normal(size=(2, 2, 5, 9)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    pool_x = rng.normal(size=(2, 2, 4, 8))
    seq = rng.normal(size=(2, 4, 3))
    Wx, Wh, bl = rng.normal(size=(3, 8)) * 0.5, rng.normal(size=(2, 8)) * 0.5, rng.normal(size=8) * 0.1
    lstm_mask = np.ones((2, 4))
    lstm_mask[1, 2:] = 0
    lstm_proj = rng.normal(size=(2, 4, 2))

    def shape_ops(x, y):
        z = gc.concat([x + y, gc.reshape(x, (3, 4)).T], axis=1)
        w = gc.stack([z[:, 0], z[:, 2] * z[:, 5]], axis=0)
        return (gc.tanh(w) * ops.exp(ops.scale(w, 0.1))).mean() + ops.log(ops.exp(x)).sum()

    cases = [
        ("matmul", lambda x, y: (gc.matmul(x, y) * gc.matmul(x, y)).sum(), [m1, m2], 1e-5),
        ("add", lambda x, y: gc.tanh(gc.elementwise("add", x, y)).sum(), [a, b], 1e-5),
        ("mul", lambda x, y: gc.tanh(gc.elementwise("mul", x, y)).sum(), [a, b], 1e-5),
    ]
    for name in ("sigmoid", "tanh", "relu"):
        cases.append((name, lambda x, n=name: (gc.elementwise(n, x) * gc.elementwise(n, x)).sum(), [a], 1e-5))
    cases += [
        ("broadcast/concat/stack/reshape/exp/log", shape_ops, [v4, v3], 1e-5),
        ("log_softmax", lambda x: (gc.log_softmax(x) * logits).sum(), [logits], 1e-5),
        ("softmax_cross_entropy", lambda x: softmax_cross_entropy(x, labels), [logits], 1e-5),
        ("mse", lambda x: gc.mse(x, target), [pred], 1e-5),
        ("embedding", lambda t: gc.tanh(gc.embedding(t, ids)).sum(), [rng.normal(size=(5, 2))], 1e-5),
        ("conv2d", lambda x, k, c: gc.tanh(gc.conv2d(x, k, c, freq_stride=2, time_stride=1, time_dilation=2)).sum(),
         [conv_x, conv_w, conv_b], 1e-5),
        ("maxpool2d", lambda x: gc.tanh(gc.maxpool2d(x, (2, 2), (2, 1), time_dilation=2)).sum(), [pool_x], 1e-5),
        ("lstm", lambda x, wx, wh, bb: (gc.lstm(x, wx, wh, bb, mask=lstm_mask) * lstm_proj).sum(),
         [seq, Wx, Wh, bl], 1e-5),
        ("lstm reversed", lambda x, wx, wh, bb: (gc.lstm(x, wx, wh, bb, reverse=True, mask=lstm_mask)
                                                 * lstm_proj).sum(), [seq, Wx, Wh, bl], 1e-5),
    ]
    for mode in ("train", "eval"):
        x = rng.normal(size=(2, 2, 3, 6))
        gamma, beta = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        st = gc.BatchNormState((2, 3))
        gc.batchnorm_freq(Tensor(x), Tensor(gamma), Tensor(beta), st)
        proj = rng.normal(size=x.shape)
        cases.append((f"batchnorm ({mode})",
                      lambda t, gm, bt, st=st, mode=mode, proj=proj:
                      (gc.tanh(gc.batchnorm_freq(t, gm, bt, st, mode)) * proj).sum(),
                      [x, gamma, beta], 1e-4))
    return cases


def _lstm_window_error() -> float:
    from .testing import tiny_batch, tiny_lstm
    m = tiny_lstm(cells=2, n_layers=2)
    names = list(m.params)
    bt = tiny_batch(T=4)

    def fn(*ts):
        for k, t in zip(names, ts):
            m.params[k] = t
        logits, _, spk = m.graph(bt.features)
        return softmax_cross_entropy(logits, bt.labels, bt.mask) + gc.mse(spk, bt.speaker_targets(), bt.mask)

    return grad_check(fn, [m.params[k].data.copy() for k in names]).max_rel_err


def _residual_stack_error() -> float:
    from .resnet_am import ResNetConfig, StageSpec, build, dilate_geometry
    cfg = ResNetConfig((StageSpec(2, 2), StageSpec(2, 1, init_stride=(2, 2), pool=(1, 2))), n_states=3,
                       in_channels=1, mel_bins=4, stem_maps=2, stem_kernel=(3, 3), fc=(3,), fc_time=2)
    m = build(cfg, seed=7)
    # differentiate the dense geometry so several output frames share weights
    m.geometry = dilate_geometry(m.order, m.windowed_geometry)
    names = list(m.params)
    r = np.random.default_rng(3)
    x = r.normal(size=(2, 1, 4, m.context + 2))
    y = r.integers(0, 3, size=(2, 3))

    def fn(*ts):
        for k, t in zip(names, ts):
            m.params[k] = t
        return softmax_cross_entropy(m.graph(x, mode="train"), y)

    return grad_check(fn, [m.params[k].data.copy() for k in names]).max_rel_err


def check_gradients() -> tuple[bool, str]:
    t0 = time.perf_counter()
    worst, failures = {}, []
    for name, fn, inputs, tol in _op_cases(np.random.default_rng(1234)):
        err = grad_check(fn, inputs).max_rel_err
        worst[name] = err
        if not err < tol:
            failures.append(f"{name}={err:.1e}")
    # gradient reversal is identity forward and -lambda backward, so central
    # differences cannot check it; compare the adjoint with its definition
    up = np.random.default_rng(7).normal(size=(3, 5))
    x = Tensor(up * 0.5, requires_grad=True)
    (gc.grad_reverse(x, 0.3) * up).sum().backward()
    rev_err = float(np.abs(x.grad + 0.3 * up).max())
    if rev_err != 0.0:
        failures.append(f"grad_reverse adjoint={rev_err:.1e}")
    lstm_err = _lstm_window_error()
    res_err = _residual_stack_error()
    if not lstm_err < 1e-5:
        failures.append(f"lstm window loss={lstm_err:.1e}")
    if not res_err < 1e-4:
        failures.append(f"residual stack={res_err:.1e}")
    ok_time, time_msg = _budget(time.perf_counter() - t0, 120)
    op_max = max(v for k, v in worst.items() if not k.startswith("batchnorm"))
    bn_max = max(v for k, v in worst.items() if k.startswith("batchnorm"))
    detail = (f"{len(worst)} ops max {op_max:.1e} (bn {bn_max:.1e}), reversal adjoint error {rev_err:.1e}; "
              f"tiny LSTM {lstm_err:.1e}; residual stack {res_err:.1e}; {time_msg}")
    if failures:
        detail += "; failing: " + ", ".join(failures)
    return not failures and ok_time, detail


# -- SA-MTL ----------------------------------------------------------------------------------

def check_sa_mtl() -> tuple[bool, str]:
    from .lstm_am import ce_step, gradient_reversal_step, sa_mtl_step
    from .testing import tiny_batch, tiny_lstm
    rev = {}
    for lam in (0.0, 0.1, 0.7):
        a, b = tiny_lstm(seed=4), tiny_lstm(seed=4)
        bt = tiny_batch(seed=5)
        sa_mtl_step(a, bt, lam, 0.3)
        gradient_reversal_step(b, bt, lam, 0.3)
        rev[lam] = max(float(np.abs(a.params[k].data - b.params[k].data).max()) for k in a.params)
    a, b = tiny_lstm(seed=6), tiny_lstm(seed=6)
    bt = tiny_batch(seed=7)
    sa_mtl_step(a, bt, 0.0, 0.2)
    ce_step(b, bt, gc.Optimizer({}, gc.OptimizerConfig("sgd", 0.2)))
    sgd = max(float(np.abs(a.params[k].data - b.params[k].data).max())
              for k in a.params if not k.startswith("speaker."))
    ok = max(rev.values()) < 1e-10 and sgd < 1e-12
    detail = ("reversal diff " + ", ".join(f"lambda={k}: {v:.1e}" for k, v in rev.items())
              + f"; lambda=0 vs SGD {sgd:.1e}")
    return ok, detail


# -- dense prediction -------------------------------------------------------------------------

def _dense_diff(m, T_extra, seed=0) -> float:
    from .resnet_am import to_dilated
    r = np.random.default_rng(seed)
    ctx = m.context
    x = r.normal(size=(m.config.in_channels, m.config.mel_bins, ctx + T_extra))
    dense = to_dilated(m).forward_dense(x)
    windows = np.stack([x[:, :, t:t + ctx] for t in range(T_extra + 1)])
    return float(np.abs(dense - m.forward_window(windows)).max())


def check_dense() -> tuple[bool, str]:
    from .resnet_am import build, column_spec, desk_preset
    from .testing import is_time_strided, randomize_bn, small_resnet_config
    t0 = time.perf_counter()
    configs = [("column d /8", column_spec("d", 8, n_states=20), 7),
               ("column b /8", column_spec("b", 8, n_states=20), 5),
               ("desk preset", desk_preset(16, 5), 9)]
    configs += [(f"random #{s}", small_resnet_config(s), s % 10) for s in range(1, 9)]
    diffs, strided = {}, 0
    for i, (name, cfg, extra) in enumerate(configs):
        m = build(cfg, seed=i + 1)
        randomize_bn(m, i)
        diffs[name] = _dense_diff(m, extra, i)
        strided += is_time_strided(cfg)
    worst = max(diffs.values())
    ok_time, time_msg = _budget(time.perf_counter() - t0, 180)
    return (worst < 1e-9 and strided >= 1 and len(diffs) >= 3 and ok_time,
            f"{len(diffs)} architectures ({strided} time-strided), max |dense - windowed| {worst:.1e}; {time_msg}")


# -- architecture ----------------------------------------------------------------------------

def check_architecture() -> tuple[bool, str]:
    from .resnet_am import column_spec, max_single_output_window, parameter_count, receptive_field
    n = parameter_count(column_spec("d"))
    rel = abs(n - 67.1e6) / 67.1e6
    ctx_b = receptive_field(column_spec("b"))
    ctx_d = max_single_output_window(column_spec("d"))
    ok = rel < 0.01 and ctx_b == 55 and ctx_d == 76
    return ok, (f"column d params {n / 1e6:.2f}M ({100 * rel:.2f}% from 67.1M); "
                f"column b context {ctx_b}; column d longest single-output window {ctx_d}")


# -- scoring -------------------------------------------------------------------------------------

def check_alignment() -> tuple[bool, str]:
    from .oracles import all_strings, exhaustive_edit_costs
    from .scoring.align import align
    t0 = time.perf_counter()
    strings = all_strings("abc", 6)
    words = {n: [["abc"[k] for k in s] for s in strings[n]] for n in strings}
    pairs = mismatches = 0
    for n in range(7):
        for m in range(7):
            costs = exhaustive_edit_costs(strings[n], strings[m])
            for i, r in enumerate(words[n]):
                row = costs[i]
                for j, h in enumerate(words[m]):
                    a = align(r, h)
                    if a.errors != row[j] or a.n_ref != n or a.matches + a.subs + a.ins != m:
                        mismatches += 1
                pairs += len(words[m])
    ok_time, time_msg = _budget(time.perf_counter() - t0, 120)
    return mismatches == 0 and ok_time, f"{pairs} pairs, {mismatches} mismatches vs exhaustive search; {time_msg}"


def check_normalization() -> tuple[bool, str]:
    from .scoring.formats import apply_glm, period_rules
    from .scoring.normalize import describe, normalize, plain_tokens, render
    inputs = (FIXTURES / "normalization_input.txt").read_text().splitlines()
    golden = (FIXTURES / "normalization_golden.txt").read_text()
    produced = "".join("\t".join(describe(normalize(line))) + "\n" for line in inputs)
    norm_ok = produced.encode() == golden.encode()
    glm_lines = (FIXTURES / "glm_golden.txt").read_text().splitlines()
    glm_bad = 0
    for line in glm_lines:
        raw, want = line.split("\t")
        glm_bad += render(apply_glm(plain_tokens(raw.split()), period_rules())) != want
    return norm_ok and glm_bad == 0, (f"normalization {len(inputs)} lines {'byte-exact' if norm_ok else 'DIFFER'}; "
                                      f"period GLM {len(glm_lines) - glm_bad}/{len(glm_lines)} exact")


# -- language models ------------------------------------------------------------------------------

def check_brown() -> tuple[bool, str]:
    from .lm.brown import brown_cluster, brown_from_counts
    from .oracles import average_mutual_information, exhaustive_best_ami
    from .testing import alternating_classes, brown_benchmark_family
    planted = all(
        (c := brown_cluster(alternating_classes(s), 2))["x1"] == c["x2"] != c["y1"] == c["y2"] for s in range(5))
    ratios = []
    for M, C in brown_benchmark_family():
        V = len(M)
        big = {(a, b): float(M[a, b]) for a in range(V) for b in range(V) if M[a, b]}
        got = average_mutual_information(list(brown_from_counts(M, C)), big)
        best = exhaustive_best_ami(V, C, big)
        ratios.append(got / best if best > 1e-12 else 1.0)
    r = np.array(ratios)
    low = int((r < 0.95).sum())
    return planted and low == 0, (f"planted 2-class structure {'recovered' if planted else 'MISSED'} (5 seeds); "
                                  f"AMI / exhaustive optimum over {len(r)} corpora: min {r.min():.3f}, "
                                  f"mean {r.mean():.3f}, {low} below 0.95")


def check_interpolation() -> tuple[bool, str]:
    from .corpus import synth_corpus
    from .lm import Vocab, em_weights, lm_corpora, mixture_perplexity, perplexity, train_ngram
    from .lm.interpolate import event_probs
    texts = lm_corpora(synth_corpus(), n_general=300, n_domain=120, n_heldout=80)
    vocab = Vocab.build(texts["general"] + texts["domain"] + texts["heldout"])
    models = [train_ngram(texts["general"], 2, vocab=vocab), train_ngram(texts["domain"], 2, vocab=vocab),
              train_ngram(texts["domain"], 3, vocab=vocab), train_ngram(texts["general"], 1, vocab=vocab)]
    P = event_probs(models, texts["heldout"])
    res = em_weights(P)
    mix = mixture_perplexity(P, res.weights)
    singles = [perplexity(m, texts["heldout"]) for m in models]
    steps = np.diff(res.log_likelihoods)
    monotone = bool(np.all(steps >= -1e-9 * max(1.0, abs(res.log_likelihoods[-1]))))
    ok = mix <= min(singles) + 1e-6 and monotone
    return ok, (f"mixture ppl {mix:.4f} vs best single {min(singles):.4f}; "
                f"{len(steps)} EM iterations, monotone={monotone}")


def check_dcc_causality() -> tuple[bool, str]:
    from .lm import NeuralLM, NeuralLmConfig, Vocab
    v = Vocab.build([[f"w{i}" for i in range(10)]])
    cfg = NeuralLmConfig(arch="word_dcc", dilations=(1, 2, 4), kernel=2)
    model = NeuralLM(v, cfg, seed=1)
    rf = cfg.receptive_field
    base = list(np.random.default_rng(0).integers(3, len(v), size=24))

    def outputs(ids):
        return model.graph(np.array([ids]))[0].data[0]

    ref = outputs(base)
    future_max, leaks, inside_dead = 0.0, 0, 0
    for pos in range(len(base)):
        pert = list(base)
        pert[pos] = 3 + (pert[pos] - 3 + 1) % (len(v) - 3)
        diff = np.abs(outputs(pert) - ref).max(axis=1)
        for t in range(len(base)):
            if pos > t:
                future_max = max(future_max, float(diff[t]))
                leaks += diff[t] != 0.0
            elif pos > t - rf and diff[t] == 0.0:
                inside_dead += 1
    return leaks == 0 and inside_dead == 0, (f"max sensitivity to future tokens {future_max:.1e} over all "
                                             f"{len(base)} positions; receptive field {rf}")


def check_end_to_end() -> tuple[bool, str]:
    from .pipeline import ExperimentConfig, run_end_to_end
    rep = run_end_to_end(ExperimentConfig())
    m = rep.metrics
    failing = [k for k, v in rep.checks.items() if not v]
    detail = (f"LSTM acc {m['lstm_frame_acc']:.3f} (lambda=0: {m['lstm_lambda0_frame_acc']:.3f}); "
              f"ResNet acc {m['resnet_frame_acc']:.3f}; WER lstm {m['wer_lstm']:.2f} resnet {m['wer_resnet']:.2f} "
              f"fused {m['wer_fused']:.2f}; speaker probe {m['probe_lambda']:.4f} vs {m['probe_lambda0']:.4f} "
              f"at lambda=0; {rep.seconds:.0f}s")
    if failing:
        detail += "; failing: " + ", ".join(failing)
    return rep.passed, detail


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "gradients": check_gradients,
    "sa-mtl": check_sa_mtl,
    "dense": check_dense,
    "architecture": check_architecture,
    "alignment": check_alignment,
    "normalization": check_normalization,
    "brown": check_brown,
    "interpolation": check_interpolation,
    "dcc-causality": check_dcc_causality,
    "end-to-end": check_end_to_end,
}


def run_checks(names=None, log: Callable[[str], None] | None = print) -> list[CheckResult]:
    """Run the selected checks (all by default), logging one line per check."""
    from .errors import ConfigError
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    results = []
    for name in names:
        t0 = time.perf_counter()
        try:
            passed, detail = CHECKS[name]()
        except Exception as exc:          # a crashing check is a failing check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(passed), detail, time.perf_counter() - t0)
        results.append(res)
        if log:
            log(res.line())
    return results
