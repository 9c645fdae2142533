import cmath
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr.corpus import CorpusConfig, FeatureSpec, StreamSpec, synth_corpus
from convasr.errors import (
    AlignmentError,
    ConfigError,
    DataError,
    SpecError,
    TrainingError,
)
from convasr.gradcore import grad_check, softmax_cross_entropy
from convasr.lstm_am import (
    LstmAcousticModel,
    LstmAmConfig,
    LstmSchedule,
    Minibatch,
    ce_step,
    discard_speaker_head,
    forced_align,
    frame_accuracy,
    gradient_reversal_step,
    realign,
    sa_mtl_step,
    train,
)
from convasr.testing import TINY_FEATURES, tiny_batch, tiny_lstm

FEATS = TINY_FEATURES
tiny = tiny_lstm
batch = tiny_batch


def snapshot(model):
    return {k: v.data.copy() for k, v in model.params.items()}


# -- forward --------------------------------------------------------------------

def test_forward_shape():
    assert tiny().forward(np.zeros((21, 3))).shape == (21, 4)


def test_feature_dim_mismatch():
    with pytest.raises(SpecError):
        tiny().forward(np.zeros((21, 5)))


def test_config_invariants():
    with pytest.raises(ConfigError):
        LstmAmConfig(FEATS, n_states=4, cells_per_layer=3)
    with pytest.raises(ConfigError):
        LstmAmConfig(FEATS, n_states=0)


def test_zero_weights_give_uniform_rows():
    m = tiny()
    for p in m.params.values():
        p.data = np.zeros_like(p.data)
    logits = m.forward(np.random.default_rng(1).normal(size=(7, 3)))
    probs = np.exp(logits - logits.max(1, keepdims=True))
    np.testing.assert_allclose(probs / probs.sum(1, keepdims=True), 0.25)


def test_mirrored_weights_palindrome_symmetry():
    m = tiny(n_layers=2)
    n = 2
    p = m.params
    for layer in range(2):
        fw, bw = f"trunk.l{layer}.fw", f"trunk.l{layer}.bw"
        for suffix in (".Wh", ".b"):
            p[bw + suffix].data = p[fw + suffix].data.copy()
        wx = p[fw + ".Wx"].data
        # upper layers see [fw, bw]; the mirror swaps the two halves
        p[bw + ".Wx"].data = wx.copy() if layer == 0 else np.concatenate([wx[n:], wx[:n]])
    wb = p["trunk.bottleneck.W"].data
    p["trunk.bottleneck.W"].data = np.concatenate([wb[:n], wb[:n]])
    half = np.random.default_rng(2).normal(size=(4, 3))
    x = np.concatenate([half, half[::-1]])
    logits = m.forward(x)
    np.testing.assert_allclose(logits, logits[::-1], atol=1e-13)
    trunk = m.graph(x)[1].data
    np.testing.assert_allclose(trunk[:, :n], trunk[::-1, n:], atol=1e-13)


def test_no_state_carried_across_windows():
    m = tiny()
    r = np.random.default_rng(3)
    a, b = r.normal(size=(6, 3)), r.normal(size=(6, 3))
    both = m.forward(np.stack([a, b]))
    np.testing.assert_array_equal(both[1], m.forward(b))


def test_window_loss_gradient():
    m = tiny(cells=2, n_layers=2)
    names = list(m.params)
    bt = batch(T=4)

    def fn(*ts):
        for k, t in zip(names, ts):
            m.params[k] = t
        logits, _, spk = m.graph(bt.features)
        from convasr.gradcore import mse
        return softmax_cross_entropy(logits, bt.labels, bt.mask) + mse(spk, bt.speaker_targets(), bt.mask)

    arrays = [m.params[k].data.copy() for k in names]
    report = grad_check(fn, arrays)
    assert report.max_rel_err < 1e-5, report


# -- SA-MTL -------------------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.0, 0.1, 0.7])
def test_sa_mtl_matches_gradient_reversal(lam):
    a, b = tiny(seed=4), tiny(seed=4)
    bt = batch(seed=5)
    sa_mtl_step(a, bt, lam, 0.3)
    gradient_reversal_step(b, bt, lam, 0.3)
    for k in a.params:
        assert np.abs(a.params[k].data - b.params[k].data).max() < 1e-10, k


def test_lambda_zero_is_plain_sgd():
    from convasr.gradcore import Optimizer, OptimizerConfig
    a, b = tiny(seed=6), tiny(seed=6)
    bt = batch(seed=7)
    sa_mtl_step(a, bt, 0.0, 0.2)
    ce_step(b, bt, Optimizer({}, OptimizerConfig("sgd", 0.2)))
    for k in a.params:
        if not k.startswith("speaker."):
            assert np.abs(a.params[k].data - b.params[k].data).max() < 1e-12, k


def test_missing_speaker_vector():
    bt = batch()
    bt.speaker_vectors = None
    with pytest.raises(DataError):
        sa_mtl_step(tiny(), bt, 0.1, 0.1)


def test_groups_partition_parameters():
    m = tiny()
    groups = [set(m.group(g)) for g in ("trunk", "main", "speaker")]
    assert set().union(*groups) == set(m.params)
    assert sum(len(g) for g in groups) == len(m.params)


def _scalar_losses(P, x, y, s):
    """Plain-Python 1-cell-per-direction BLSTM, one layer, usable with complex params."""
    sig = lambda z: 1 / (1 + cmath.exp(-z))  # noqa: E731

    def run(pre, order):
        h = c = 0
        out = {}
        for t in order:
            g = [sum(x[t][f] * P[pre + ".Wx"][f][j] for f in range(len(x[t]))) + h * P[pre + ".Wh"][0][j]
                 + P[pre + ".b"][j] for j in range(4)]
            c = sig(g[1]) * c + sig(g[0]) * cmath.tanh(g[2])
            h = sig(g[3]) * cmath.tanh(c)
            out[t] = h
        return out

    T = len(x)
    fw = run("trunk.l0.fw", range(T))
    bw = run("trunk.l0.bw", range(T - 1, -1, -1))
    ce = mse = 0
    for t in range(T):
        hid = [fw[t], bw[t]]
        bn = sum(hid[i] * P["trunk.bottleneck.W"][i][0] for i in range(2)) + P["trunk.bottleneck.b"][0]
        logits = [bn * P["main.W"][0][k] + P["main.b"][k] for k in range(2)]
        ce += -(logits[y[t]] - cmath.log(sum(cmath.exp(v) for v in logits)))
        s1 = sig(sum(hid[i] * P["speaker.W1"][i][0] for i in range(2)) + P["speaker.b1"][0])
        s2 = cmath.tanh(s1 * P["speaker.W2"][0][0] + P["speaker.b2"][0])
        mse += (s2 - s) ** 2
    return ce / T, mse / T


def test_one_cell_update_matches_hand_computation():
    cfg = LstmAmConfig(FeatureSpec((StreamSpec("fmllr", 2),)), n_states=2, n_layers=1, cells_per_layer=2,
                       bottleneck_dim=1, speaker_dim=1, speaker_hidden=1)
    model = LstmAcousticModel(cfg, seed=9)
    x = [[0.4, -1.1], [0.7, 0.2]]
    y = [1, 0]
    s = 0.35
    bt = Minibatch(np.array([x]), np.array([y]), np.ones((1, 2)), np.array([[s]]))
    lam, lr = 0.1, 0.5
    before = {k: v.tolist() for k, v in snapshot(model).items()}
    ce0, mse0 = _scalar_losses(before, x, y, s)
    expected = {}
    h = 1e-30
    for name, value in before.items():
        arr = np.array(value, dtype=float)
        new = arr.copy()
        for idx in np.ndindex(arr.shape):
            P = {k: np.array(v, dtype=complex) for k, v in before.items()}
            P[name][idx] += 1j * h
            ce, ms = _scalar_losses({k: v.tolist() for k, v in P.items()}, x, y, s)
            dce, dmse = ce.imag / h, ms.imag / h
            if name.startswith("main."):
                step = dce
            elif name.startswith("speaker."):
                step = dmse
            else:
                step = dce - lam * dmse
            new[idx] = arr[idx] - lr * step
        expected[name] = new
    got_ce, got_mse = sa_mtl_step(model, bt, lam, lr)
    assert abs(got_ce - ce0.real) < 1e-14 and abs(got_mse - mse0.real) < 1e-14
    for k, v in expected.items():
        np.testing.assert_allclose(model.params[k].data, v, rtol=0, atol=1e-14)


# -- head discard ---------------------------------------------------------------------

def test_discard_speaker_head(tmp_path):
    m = tiny()
    x = np.random.default_rng(8).normal(size=(9, 3))
    pruned = discard_speaker_head(m)
    assert np.array_equal(m.forward(x), pruned.forward(x))
    head = sum(v.size for k, v in m.params.items() if k.startswith("speaker."))
    assert m.num_params() - pruned.num_params() == head > 0
    pruned.save(tmp_path / "am.ckpt")
    back = LstmAcousticModel.load(tmp_path / "am.ckpt")
    assert np.array_equal(back.forward(x), pruned.forward(x))
    assert not back.has_speaker_head


# -- alignment -----------------------------------------------------------------------------

def brute_align(lp, states):
    T, N = len(lp), len(states)
    best, best_path = -np.inf, None
    # boundaries in increasing lexicographic order: first maximum wins the tie
    for cuts in itertools.combinations(range(1, T), N - 1):
        bounds = (0,) + cuts + (T,)
        path = np.concatenate([[states[j]] * (bounds[j + 1] - bounds[j]) for j in range(N)])
        score = lp[np.arange(T), path].sum()
        if score > best:
            best, best_path = score, path
    return best_path


def test_align_one_hot_recovers_labels():
    labels = np.array([0, 0, 1, 1, 1, 2, 3, 3])
    lp = np.log(np.eye(4)[labels] * (1 - 1e-9) + 1e-9 / 4)
    np.testing.assert_array_equal(forced_align(lp, [0, 1, 2, 3]), labels)


def test_align_two_states_three_frames():
    lp = np.log(np.array([[0.9, 0.1], [0.2, 0.8], [0.3, 0.7]]))
    np.testing.assert_array_equal(forced_align(lp, [0, 1]), [0, 1, 1])


def test_align_tie_prefers_earlier_transition():
    np.testing.assert_array_equal(forced_align(np.zeros((4, 2)), [0, 1]), [0, 1, 1, 1])


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 10**6), st.booleans())
def test_align_matches_brute_force(T, N, seed, coarse):
    if N > T:
        with pytest.raises(AlignmentError):
            forced_align(np.zeros((T, 4)), list(range(N)))
        return
    r = np.random.default_rng(seed)
    lp = np.log(r.dirichlet(np.ones(4), size=T))
    if coarse:
        lp = np.round(lp)   # forces ties
    states = list(r.integers(0, 4, N))
    np.testing.assert_array_equal(forced_align(lp, states), brute_align(lp, states))


# -- training ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_corpus():
    return synth_corpus(CorpusConfig(seed=3, n_utts=24, n_states=8, n_words=4, noise=0.3))


def test_training_loss_decreases_and_realign(small_corpus):
    c = small_corpus
    feats = FeatureSpec((StreamSpec("fmllr", c.config.feat_dim),))
    m = LstmAcousticModel(LstmAmConfig(feats, n_states=8, n_layers=1, cells_per_layer=16, bottleneck_dim=8), seed=0)
    res = train(m, c.utterances, LstmSchedule(epochs=6, learning_rate=0.3, optimizer="nesterov"))
    assert res.losses[5] < res.losses[0]
    assert frame_accuracy(m, c.utterances) > 0.6
    u = c.utterances[0]
    new = realign(m, u, c.lexicon)
    runs = [int(new[0])] + [int(b) for a, b in zip(new, new[1:]) if a != b]
    assert runs == [s for w in u.words for s in c.lexicon[w]]


def test_training_is_deterministic(small_corpus):
    c = small_corpus
    feats = FeatureSpec((StreamSpec("fmllr", c.config.feat_dim),))
    runs = []
    for _ in range(2):
        m = LstmAcousticModel(LstmAmConfig(feats, n_states=8, n_layers=1, cells_per_layer=4, bottleneck_dim=4,
                                           speaker_dim=c.config.spk_dim), seed=1)
        runs.append(train(m, c.utterances[:6], LstmSchedule(epochs=1, lam=0.1, learning_rate=0.1)).losses)
    assert runs[0] == runs[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(small_corpus):
    c = small_corpus
    feats = FeatureSpec((StreamSpec("fmllr", c.config.feat_dim),))
    m = LstmAcousticModel(LstmAmConfig(feats, n_states=8, n_layers=1, cells_per_layer=4, bottleneck_dim=4), seed=1)
    with pytest.raises(TrainingError, match="epoch 0"):
        train(m, c.utterances[:4], LstmSchedule(epochs=1, learning_rate=1e308))


def test_realign_infeasible(small_corpus):
    u = small_corpus.utterances[0]
    m = LstmAcousticModel(LstmAmConfig(FeatureSpec((StreamSpec("fmllr", small_corpus.config.feat_dim),)), 8), 0)
    short = type(u)(u.id, u.frames[:2], u.labels[:2], u.speaker_id, u.speaker_vector, u.words,
                    {k: v[:2] for k, v in u.streams.items()})
    with pytest.raises(AlignmentError):
        realign(m, short, small_corpus.lexicon)
