"""Desk-scale conversational speech recognition toolkit.

Subpackages
-----------
gradcore     reverse-mode tensor engine, optimizers, gradient checks, checkpoints
corpus       synthetic corpora, deltas, feature fusion, subsequence batching, balancing
lstm_am      bidirectional LSTM acoustic model with speaker-adversarial multi-task training
resnet_am    residual CNN acoustic model with crop shortcuts and dense (dilated) prediction
decode_fusion frame-level score fusion and a small Viterbi word decoder
lm           n-gram / LSTM / dilated-causal-conv LMs, Brown clustering, interpolation, rescoring
scoring      transcript normalisation, CTM/TRN/GLM handling, alignment, WER reports
pipeline     end-to-end synthetic experiment and its serializable config
verify       the acceptance suite behind ``convasr verify``
cli          the ``convasr`` command line
"""
__version__ = "0.1.0"
