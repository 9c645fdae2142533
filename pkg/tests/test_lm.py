import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr import gradcore as gc
from convasr.corpus import synth_corpus
from convasr.errors import ConfigError, ConsistencyError, DataError, DegenerateError
from convasr.lm import (
    InterpolatedLM,
    InterpolationWeights,
    LmSchedule,
    LmScorer,
    NBestEntry,
    NBestList,
    NeuralLM,
    NeuralLmConfig,
    NgramLM,
    Vocab,
    brown_cluster,
    brown_from_counts,
    class_ami,
    em_weights,
    lm_corpora,
    mixture_perplexity,
    perplexity,
    read_nbest,
    rescore_nbest,
    train_char_lstm,
    train_ngram,
    train_word_dcc,
    train_word_lstm,
    tune_interpolation,
    write_nbest,
)
from convasr.lm.neural import batch_arrays
from convasr.oracles import average_mutual_information, exhaustive_best_ami
from convasr.testing import alternating_classes

ALTERNATING = [["a", "b"] * 6] * 16


class TableLM(LmScorer):
    """Fixed distributions keyed by the last history word (for hand computations)."""

    kind = "table"

    def __init__(self, vocab, table, predicts_end=True):
        self.vocab, self.table, self.predicts_end = vocab, table, predicts_end

    def distribution(self, history):
        key = self.vocab.words[history[-1]] if history else "<s>"
        p = np.zeros(len(self.vocab))
        for w, q in self.table[key].items():
            p[self.vocab.index[w]] = q
        return p


@pytest.fixture(scope="module")
def texts():
    return lm_corpora(synth_corpus(), n_general=200, n_domain=120, n_heldout=60)


# -- vocabulary -------------------------------------------------------------------------

def test_vocab_layout():
    v = Vocab.build([["x", "y"], ["y", "z"]])
    assert v.words == ["<s>", "</s>", "<unk>", "x", "y", "z"]
    assert v.encode(["z", "nope"]) == [5, v.unk]
    with pytest.raises(ConfigError):
        Vocab(["x", "<s>", "</s>", "<unk>"])
    with pytest.raises(DataError):
        Vocab.build([[]])
    with pytest.raises(DataError):
        Vocab.build([["</s>"]])


# -- n-gram ------------------------------------------------------------------------------

def test_unigram_mle():
    m = train_ngram([["a", "a", "a", "b"]], order=1, discount=0.0, predicts_end=False)
    assert m.distribution([])[m.vocab.id("a")] == 0.75


@pytest.mark.parametrize("D,floor", [(0.5, 0.95), (0.1, 0.99), (1e-4, 0.9999)])
def test_bigram_deterministic_limit(D, floor):
    m = train_ngram(ALTERNATING, order=2, discount=D)
    assert m.distribution(m.vocab.encode(["a"]))[m.vocab.id("b")] > floor


def test_order_sweep_on_training_text(texts):
    ppl = [perplexity(train_ngram(texts["domain"], n), texts["domain"]) for n in (1, 2, 3, 4)]
    assert all(hi >= lo for hi, lo in zip(ppl, ppl[1:]))


def test_ngram_errors_and_unknown():
    with pytest.raises(DataError):
        train_ngram([[]], 2)
    with pytest.raises(ConfigError):
        train_ngram(ALTERNATING, 0)
    with pytest.raises(ConfigError):
        train_ngram(ALTERNATING, 2, discount=1.5)
    m = train_ngram(ALTERNATING, 2)
    assert math.isfinite(m.log_prob(["a", "never-seen"]))


def test_ngram_round_trip(tmp_path):
    m = train_ngram([["a", "b", "c"], ["b", "a"]], 3)
    m.save(tmp_path / "lm.json")
    back = NgramLM.load(tmp_path / "lm.json")
    for h in ([], [3], [3, 4], [5, 5]):
        np.testing.assert_array_equal(back.distribution(h), m.distribution(h))


# -- perplexity ---------------------------------------------------------------------------

def test_uniform_perplexity_is_vocab_size():
    v = Vocab.build([["a", "b", "c", "d"]])
    table = {w: {x: 0.25 for x in "abcd"} for w in ["<s>", *"abcd"]}
    assert perplexity(TableLM(v, table, predicts_end=False), [["a", "c", "d", "d", "b"]]) == pytest.approx(4.0)


def test_perfect_predictor_perplexity_is_one():
    v = Vocab.build([["a", "b"]])
    table = {"<s>": {"a": 1.0}, "a": {"b": 1.0}, "b": {"</s>": 1.0}}
    assert perplexity(TableLM(v, table), [["a", "b"]]) == 1.0


def test_hand_computed_bigram_perplexity():
    v = Vocab.build([["a", "b"]])
    table = {"<s>": {"a": 0.5, "b": 0.5}, "a": {"a": 0.2, "b": 0.6, "</s>": 0.2},
             "b": {"a": 0.3, "b": 0.3, "</s>": 0.4}}
    # events: a|<s>, b|a, a|b, </s>|a
    expected = (0.5 * 0.6 * 0.3 * 0.2) ** (-1 / 4)
    assert perplexity(TableLM(v, table), [["a", "b", "a"]]) == pytest.approx(expected, rel=1e-12)


# -- Brown clustering --------------------------------------------------------------------------

def test_planted_two_classes():
    classes = brown_cluster(alternating_classes(0), 2)
    assert classes["x1"] == classes["x2"] != classes["y1"] == classes["y2"]


def test_singletons_when_classes_equal_vocab():
    counts = np.random.default_rng(1).integers(0, 5, size=(5, 5)).astype(float)
    assign = brown_from_counts(counts, 5)
    assert sorted(assign) == list(range(5))
    assert class_ami(counts) == pytest.approx(
        average_mutual_information(list(assign), {(a, b): counts[a, b] for a in range(5) for b in range(5)}))


def test_brown_errors():
    with pytest.raises(ConfigError):
        brown_from_counts(np.ones((3, 3)), 0)
    with pytest.raises(ConfigError):
        brown_from_counts(np.ones((3, 3)), 4)


def test_brown_tie_break_lowest_ids():
    # four interchangeable words: every first merge ties, so words 0 and 1 merge first
    assert list(brown_from_counts(np.ones((4, 4)), 3, refine=False)) == [0, 0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_exchange_never_lowers_ami_and_respects_oracle(seed, V):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 4, size=(V, V)).astype(float)
    bigrams = {(a, b): counts[a, b] for a in range(V) for b in range(V) if counts[a, b]}
    C = int(rng.integers(1, V + 1))
    plain = brown_from_counts(counts, C, refine=False)
    refined = brown_from_counts(counts, C)
    assert len(set(refined)) == C
    a_plain = average_mutual_information(list(plain), bigrams) if bigrams else 0.0
    a_ref = average_mutual_information(list(refined), bigrams) if bigrams else 0.0
    assert a_ref >= a_plain - 1e-12
    if bigrams:
        assert a_ref <= exhaustive_best_ami(V, C, bigrams) + 1e-12


# -- neural LMs -----------------------------------------------------------------------------

FAST = LmSchedule(epochs=20, batch_size=8, learning_rate=0.02)


@pytest.mark.parametrize("trainer,floor", [(train_word_lstm, 0.95), (train_char_lstm, 0.95), (train_word_dcc, 0.9)])
def test_learns_deterministic_successor(trainer, floor):
    model, result = trainer(ALTERNATING, schedule=FAST)
    assert model.distribution(model.vocab.encode(["a"]))[model.vocab.id("b")] > floor
    assert result.losses[-1] < result.losses[0]


def _all_scorers(texts):
    v = Vocab.build(texts["domain"])
    small = LmSchedule(epochs=1)
    classes = brown_cluster(texts["domain"], 3)
    return [
        train_ngram(texts["domain"], 3, vocab=v),
        train_word_lstm(texts["domain"], schedule=small, vocab=v)[0],
        train_char_lstm(texts["domain"], schedule=small, vocab=v)[0],
        train_word_lstm(texts["domain"], schedule=small, vocab=v, class_map=classes)[0],
        train_char_lstm(texts["domain"], schedule=small, vocab=v, class_map=classes)[0],
        train_word_dcc(texts["domain"], schedule=small, vocab=v)[0],
    ]


def test_every_scorer_normalizes(texts):
    scorers = _all_scorers(texts)
    scorers.append(InterpolatedLM(scorers, [1 / len(scorers)] * len(scorers)))
    assert [s.kind for s in scorers] == ["ngram", "word_lstm", "char_lstm", "word_lstm_mtl", "char_lstm_mtl",
                                         "word_dcc", "interpolated"]
    rng = np.random.default_rng(0)
    V = len(scorers[0].vocab)
    for s in scorers:
        for _ in range(100 if s.kind == "ngram" else 15):
            h = list(rng.integers(3, V, size=rng.integers(0, 6)))
            assert abs(s.distribution(h).sum() - 1.0) < 1e-6


def test_sentence_scoring_matches_stepwise(texts):
    model = _all_scorers(texts)[1]
    sent = texts["heldout"][0]
    batch = model.score_sentences([sent, sent[:2]])[0]
    steps = LmScorer.token_log_probs(model, sent)
    np.testing.assert_allclose(batch, steps, atol=1e-12)


def test_mtl_weight_zero_is_bit_identical(texts):
    classes = brown_cluster(texts["domain"], 3)
    cfg0 = NeuralLmConfig(mtl_weight=0.0, dropout=0.2)
    plain, r_plain = train_word_lstm(texts["domain"][:40], cfg0, LmSchedule(epochs=2))
    mtl, r_mtl = train_word_lstm(texts["domain"][:40], cfg0, LmSchedule(epochs=2), class_map=classes)
    assert r_plain.losses == r_mtl.losses
    for name, p in plain.params.items():
        np.testing.assert_array_equal(p.data, mtl.params[name].data)
    assert mtl.kind == "word_lstm_mtl"


def test_class_map_must_cover_vocab():
    with pytest.raises(ConfigError):
        train_word_lstm(ALTERNATING, class_map={"a": 0})
    with pytest.raises(ConfigError):
        NeuralLmConfig(mtl_weight=1.5)


@pytest.mark.parametrize("arch", ["word_lstm", "char_lstm", "word_dcc"])
@pytest.mark.parametrize("mtl", [False, True])
def test_gradient_check(arch, mtl):
    sents = [["a", "b", "c", "b"], ["c", "a", "a"], ["b"]]
    v = Vocab.build(sents)
    classes = {"a": 0, "b": 1, "c": 0} if mtl else None
    cfg = NeuralLmConfig(arch=arch, embed_dim=3, hidden=4, char_dim=2, dilations=(1, 2), kernel=2)
    model = NeuralLM(v, cfg, seed=3, class_map=classes)
    names = sorted(model.params)
    inputs, targets, mask = batch_arrays(v, sents)
    # unit-scale parameters: at the small init some recurrent gradients sit
    # three orders below the loss and the check would only measure round-off
    rng = np.random.default_rng(11)
    arrays = [rng.normal(size=model.params[n].shape) for n in names]

    def fn(*tensors):
        return model.loss(inputs, targets, mask, params=dict(zip(names, tensors)))

    report = gc.grad_check(fn, arrays)
    assert report.max_rel_err < 1e-5


def test_char_embeddings_depend_only_on_spelling():
    cfg = NeuralLmConfig(arch="char_lstm")
    a = NeuralLM(Vocab.build([["ab", "ba"]]), cfg, seed=0)
    b = NeuralLM(Vocab.build([["ba", "ab"]]), cfg, seed=0)
    ea, eb = a.embedding_table().data, b.embedding_table().data
    np.testing.assert_array_equal(ea[a.vocab.id("ab")], eb[b.vocab.id("ab")])
    assert not np.allclose(ea[a.vocab.id("ab")], ea[a.vocab.id("ba")])
    assert len({tuple(np.round(r, 12)) for r in ea}) == len(a.vocab)


def test_char_lstm_rejects_empty_word():
    with pytest.raises(DataError):
        NeuralLM(Vocab(["<s>", "</s>", "<unk>", ""]), NeuralLmConfig(arch="char_lstm"))


def test_dropout_only_in_training(texts):
    model, _ = train_word_lstm(texts["domain"][:20], NeuralLmConfig(dropout=0.5), LmSchedule(epochs=1))
    ids = np.array([[0, 3, 4, 5]])
    np.testing.assert_array_equal(model.graph(ids)[0].data, model.graph(ids)[0].data)
    noisy = model.graph(ids, rng=np.random.default_rng(0))[0].data
    assert not np.allclose(noisy, model.graph(ids)[0].data)


def _dcc_outputs(model, ids):
    return model.graph(np.array([ids]))[0].data[0]


def test_dcc_causality_and_receptive_field():
    v = Vocab.build([[f"w{i}" for i in range(10)]])
    cfg = NeuralLmConfig(arch="word_dcc", dilations=(1, 2, 4), kernel=2)
    model = NeuralLM(v, cfg, seed=1)
    rf = cfg.receptive_field
    assert rf == 8
    rng = np.random.default_rng(0)
    base = list(rng.integers(3, len(v), size=20))
    out = _dcc_outputs(model, base)
    t = 15
    for pos in range(len(base)):
        pert = list(base)
        pert[pos] = 3 + (pert[pos] - 3 + 1) % (len(v) - 3)
        diff = np.abs(_dcc_outputs(model, pert)[t] - out[t]).max()
        if pos > t or pos <= t - rf:
            assert diff == 0.0
        else:
            assert diff > 0.0


def test_neural_round_trip(tmp_path, texts):
    model, _ = train_char_lstm(texts["domain"][:10], schedule=LmSchedule(epochs=1),
                               class_map=brown_cluster(texts["domain"][:10], 2))
    model.save(tmp_path / "lm.ckpt")
    back = NeuralLM.load(tmp_path / "lm.ckpt")
    assert back.kind == "char_lstm_mtl"
    np.testing.assert_array_equal(back.distribution([3, 4]), model.distribution([3, 4]))


def test_two_stage_training_adapts_to_domain(texts):
    v = Vocab.build(texts["general"] + texts["domain"])
    general, _ = train_word_lstm(texts["general"], schedule=LmSchedule(epochs=4), vocab=v)
    before = perplexity(general, texts["heldout"])
    general.fit(texts["domain"], LmSchedule(epochs=4))
    assert perplexity(general, texts["heldout"]) < before


# -- interpolation -------------------------------------------------------------------------------

def test_dominant_model_takes_all_weight():
    rng = np.random.default_rng(0)
    strong = rng.uniform(0.5, 0.9, size=200)
    weak = strong * rng.uniform(0.01, 0.1, size=200)
    res = em_weights(np.stack([strong, weak]), max_iter=100)
    assert res.weights[0] > 1 - 1e-3


def test_identical_models_any_weights():
    p = np.random.default_rng(1).uniform(0.1, 0.9, size=50)
    res = em_weights(np.stack([p, p]))
    assert sum(res.weights) == pytest.approx(1.0)
    assert mixture_perplexity(np.stack([p, p]), [0.9, 0.1]) == pytest.approx(mixture_perplexity(np.stack([p, p]),
                                                                                                res.weights))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_em_monotone_and_beats_components(seed, K):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(6), size=(K, 40))[..., 0]
    res = em_weights(P)
    ll = np.array(res.log_likelihoods)
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))
    best_single = min(mixture_perplexity(P, np.eye(K)[i]) for i in range(K))
    assert mixture_perplexity(P, res.weights) <= best_single + 1e-6


def test_degenerate_inputs():
    with pytest.raises(DegenerateError):
        em_weights(np.array([[0.2, 0.3], [0.0, 0.0]]))
    with pytest.raises(DegenerateError):
        em_weights(np.array([[0.2, 0.0], [0.1, 0.0]]))
    with pytest.raises(ConfigError):
        em_weights(np.array([[0.2, 0.3]]))


def test_tune_on_real_models(texts, tmp_path):
    v = Vocab.build(texts["domain"])
    scorers = [train_ngram(texts["domain"], 1, vocab=v), train_ngram(texts["domain"], 2, vocab=v),
               train_word_dcc(texts["domain"], schedule=LmSchedule(epochs=2), vocab=v)[0]]
    res = tune_interpolation(scorers, texts["heldout"])
    mix = perplexity(InterpolatedLM(scorers, res.weights), texts["heldout"])
    assert mix <= min(perplexity(s, texts["heldout"]) for s in scorers) + 1e-6
    res.save(tmp_path / "w.json")
    assert InterpolationWeights.load(tmp_path / "w.json").weights == res.weights
    with pytest.raises(ConfigError):
        InterpolatedLM(scorers, [0.5, 0.5])


def test_em_decrease_is_detected(monkeypatch):
    # a corrupted likelihood sequence must trip the per-iteration assertion
    import convasr.lm.interpolate as interp

    real_log = np.log
    calls = {"n": 0}

    def bad_log(x):
        calls["n"] += 1
        out = real_log(x)
        return out - 1.0 if calls["n"] == 2 else out

    monkeypatch.setattr(interp.np, "log", bad_log)
    with pytest.raises(ConsistencyError):
        em_weights(np.array([[0.5, 0.2, 0.1], [0.1, 0.4, 0.3]]))


# -- n-best rescoring --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def bigram():
    return train_ngram(ALTERNATING + [["b", "a"] * 3], 2, discount=0.1)


def test_single_entry_unchanged(bigram):
    nb = NBestList("u1", [NBestEntry(("a", "b"), -3.0)])
    out = rescore_nbest(nb, [bigram], [1.0])
    assert out.best.words == ("a", "b")


def test_zero_lm_weight_ranks_by_acoustics(bigram):
    nb = NBestList("u1", [NBestEntry(("a", "a", "a"), -1.0), NBestEntry(("a", "b", "a"), -2.0),
                          NBestEntry(("b", "b"), -1.5)])
    out = rescore_nbest(nb, [bigram], [1.0], lm_weight=0.0)
    assert [e.acoustic for e in out.entries] == [-1.0, -1.5, -2.0]


def test_lm_promotes_second_ranked_correct_hypothesis(bigram):
    correct = ("a", "b", "a", "b")
    nb = NBestList("u1", [NBestEntry(("a", "a", "b", "b"), -10.0), NBestEntry(correct, -10.5),
                          NBestEntry(("b", "b", "b", "b"), -11.0)])
    out = rescore_nbest(nb, [bigram, bigram], [0.5, 0.5])
    assert out.best.words == correct
    assert out.best.lm == pytest.approx(bigram.log_prob(correct))
    totals = [e.total for e in out.entries]
    assert totals == sorted(totals, reverse=True)


def test_stable_order_and_penalty(bigram):
    same = [NBestEntry(("a", "b"), -1.0), NBestEntry(("b", "a"), -1.0)]
    out = rescore_nbest(NBestList("u", same), [bigram], [1.0], lm_weight=0.0)
    assert [e.words for e in out.entries] == [("a", "b"), ("b", "a")]
    longer = [NBestEntry(("a",), -1.0), NBestEntry(("a", "b", "a"), -1.0)]
    out = rescore_nbest(NBestList("u", longer), [bigram], [1.0], lm_weight=0.0, insertion_penalty=0.5)
    assert out.best.words == ("a", "b", "a")


def test_nbest_errors_and_file(tmp_path, bigram):
    with pytest.raises(DataError):
        rescore_nbest(NBestList("u"), [bigram], [1.0])
    lists = [rescore_nbest(NBestList("u1", [NBestEntry(("a", "b"), -1.25), NBestEntry(("b",), -2.0)]),
                           [bigram], [1.0]),
             NBestList("u2", [NBestEntry(("a",), -0.5, -0.25, -0.75)])]
    write_nbest(lists, tmp_path / "n.txt")
    lines = (tmp_path / "n.txt").read_text().splitlines()
    assert lines[0] == "u1" and lines[1].startswith("1 -1.25 ")
    back = read_nbest(tmp_path / "n.txt")
    assert [nb.utt_id for nb in back] == ["u1", "u2"]
    assert [e.words for e in back[0].entries] == [e.words for e in lists[0].entries]
    assert back[1].entries[0].lm == -0.25
