"""N-gram, LSTM and dilated-convolution LMs, EM interpolation and n-best rescoring.

Run: python demos/04_language_models.py
"""
from convasr.corpus import synth_corpus
from convasr.lm import (
    LmSchedule,
    NeuralLmConfig,
    Vocab,
    brown_cluster,
    lm_corpora,
    perplexity,
    rescore_nbest,
    synthetic_nbest,
    train_char_lstm,
    train_ngram,
    train_word_dcc,
    train_word_lstm,
    tune_interpolation,
)
from convasr.lm.nbest import oracle_rank

corpus = synth_corpus()
texts = lm_corpora(corpus)
vocab = Vocab.build([sorted(corpus.lexicon)])
print({k: len(v) for k, v in texts.items()}, "sentences;", len(vocab), "vocabulary entries")

classes = brown_cluster(texts["domain"], 3)
print("Brown classes:", classes)

schedule = LmSchedule(epochs=4)
models = {"ngram": train_ngram(texts["general"] + texts["domain"], 3, vocab=vocab)}
# neural models: general (shifted-grammar) text first, then in-domain text
for name, make in [
    ("word_lstm_mtl", lambda: train_word_lstm(texts["general"], NeuralLmConfig(), schedule, classes, vocab)[0]),
    ("char_lstm", lambda: train_char_lstm(texts["general"], NeuralLmConfig(arch="char_lstm"), schedule,
                                          None, vocab)[0]),
    ("word_dcc", lambda: train_word_dcc(texts["general"], NeuralLmConfig(arch="word_dcc"), schedule, vocab)[0]),
]:
    m = make()
    m.fit(texts["domain"], schedule)
    models[name] = m

for name, m in models.items():
    print(f"{name:<14} heldout perplexity {perplexity(m, texts['heldout']):.3f}")

tuned = tune_interpolation(list(models.values()), texts["heldout"])
print("EM weights:", dict(zip(models, (round(w, 3) for w in tuned.weights))))
print(f"log-likelihood {tuned.log_likelihoods[0]:.1f} -> {tuned.log_likelihoods[-1]:.1f} "
      f"in {len(tuned.log_likelihoods) - 1} iterations")

refs = corpus.sample_sentences(30, seed=999)
before = after = 0
for i, ref in enumerate(refs):
    nb = synthetic_nbest(f"u{i}", ref, corpus.words, 8, seed=i)
    before += oracle_rank(nb, ref) == 0
    after += oracle_rank(rescore_nbest(nb, list(models.values()), tuned.weights), ref) == 0
print(f"reference ranked first: {before}/30 by acoustic score alone, {after}/30 after rescoring")
