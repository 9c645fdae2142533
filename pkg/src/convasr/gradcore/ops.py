"""Differentiable primitives.

Binary arithmetic broadcasts like numpy; :func:`elementwise` is the strict
equal-shape entry point. Convolution and pooling work on ``N x C x F x T``
arrays (a 3-D ``C x F x T`` input is treated as a batch of one). The time
axis is never padded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import (
    ContextError,
    DimensionError,
    LabelError,
    UninitializedStatisticsError,
)
from .tensor import Tensor, as_tensor


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not compatible") from None


# -- arithmetic ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- pointwise nonlinearities ----------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "mul": mul, "sub": sub}


def elementwise(op: str, *operands) -> Tensor:
    """Strict pointwise op: binary operands must have identical shapes."""
    if op in _UNARY:
        (a,) = operands
        return _UNARY[op](as_tensor(a))
    if op in _BINARY:
        a, b = (as_tensor(x) for x in operands)
        if a.shape != b.shape:
            raise DimensionError(f"{op}: operand shapes differ: {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def grad_reverse(a: Tensor, lam: float) -> Tensor:
    """Identity forward; multiplies the incoming adjoint by ``-lam``."""
    return _make(a.data.copy(), (a,), lambda g: (-lam * g,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# -- reductions and shape plumbing -----------------------------------------

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    fancy = _is_fancy(index)

    def back(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _make(out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    return _make(out, tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    return getitem(table, ids)


def pad_time_left(a: Tensor, n: int) -> Tensor:
    """Prepend ``n`` zero frames on the last axis (causal padding)."""
    if n == 0:
        return a
    widths = [(0, 0)] * (a.ndim - 1) + [(n, 0)]
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[..., n:],))


# -- recurrence ----------------------------------------------------------------

def lstm(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor, reverse: bool = False,
         mask: np.ndarray | None = None) -> Tensor:
    """Single-direction LSTM over ``B x T x F`` input; gates ordered i, f, g, o.

    With ``mask`` (``B x T``, 1 = real step) padded steps carry the previous
    state forward unchanged, so the state after the last real step is final.
    """
    B, T, F = x.shape
    n = Wh.shape[0]
    proj = reshape(matmul(reshape(x, (B * T, F)), Wx) + b, (B, T, 4 * n))
    h = Tensor(np.zeros((B, n)))
    c = Tensor(np.zeros((B, n)))
    outs: list[Tensor | None] = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        gates = proj[:, t, :] + matmul(h, Wh)
        i = sigmoid(gates[:, 0:n])
        f = sigmoid(gates[:, n:2 * n])
        g = tanh(gates[:, 2 * n:3 * n])
        o = sigmoid(gates[:, 3 * n:4 * n])
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        if mask is None:
            c, h = c_new, h_new
        else:
            m = np.asarray(mask[:, t], dtype=np.float64)[:, None]
            c = c_new * m + c * (1.0 - m)
            h = h_new * m + h * (1.0 - m)
        outs[t] = h
    return stack(outs, axis=1)


# -- losses ------------------------------------------------------------------

def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax(a: Tensor) -> Tensor:
    out = _log_softmax(a.data)
    soft = np.exp(out)
    return _make(out, (a,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-probability of ``targets`` over unmasked rows.

    ``logits`` is ``rows x C`` (leading axes are flattened). Rows with mask 0
    contribute nothing, and the mean is over the unmasked count.
    """
    x = logits.data.reshape(-1, logits.shape[-1])
    n_class = x.shape[1]
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise DimensionError(f"{x.shape[0]} logit rows vs {y.shape[0]} targets")
    bad = np.flatnonzero((y < 0) | (y >= n_class))
    if bad.size:
        raise LabelError(f"target {int(y[bad[0]])} at row {int(bad[0])} outside [0, {n_class})")
    w = np.ones(len(y)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    denom = w.sum()
    if denom == 0:
        denom = 1.0
    logp = _log_softmax(x)
    rows = np.arange(len(y))
    loss = -(w * logp[rows, y]).sum() / denom

    def back(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        d *= (w / denom)[:, None]
        return ((g * d).reshape(logits.shape),)

    return _make(np.asarray(loss), (logits,), back)


def mse(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared difference; ``mask`` (leading-axis weights) drops rows."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    if mask is None:
        w = np.ones_like(diff)
    else:
        m = np.asarray(mask, dtype=np.float64)
        w = np.broadcast_to(m.reshape(m.shape + (1,) * (diff.ndim - m.ndim)), diff.shape)
    denom = w.sum() or 1.0
    loss = (w * diff * diff).sum() / denom
    return _make(np.asarray(loss), (pred,), lambda g: (g * 2.0 * w * diff / denom,))


# -- convolution and pooling -------------------------------------------------

def conv_time_length(T: int, k: int, stride: int = 1, dilation: int = 1) -> int:
    """Unpadded output length; may be < 1 for invalid combinations."""
    return (T - dilation * (k - 1) - 1) // stride + 1


def _as4d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected C x F x T or N x C x F x T input, got {x.shape}")
    return x, False


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, freq_stride: int = 1,
           time_stride: int = 1, time_dilation: int = 1, freq_padding: str = "same") -> Tensor:
    """2-D convolution over (frequency, time).

    ``kernels`` is ``C_out x C_in x k_f x k_t``. Frequency is zero-padded by
    ``(k_f - 1) // 2`` on both sides when ``freq_padding == "same"``; time is
    never padded.
    """
    x, squeeze = _as4d(x)
    N, C, F, T = x.shape
    O, Ck, KF, KT = kernels.shape
    if C != Ck:
        raise DimensionError(f"conv2d: input has {C} channels, kernels expect {Ck}")
    if freq_padding == "same":
        pf = (KF - 1) // 2
    elif freq_padding == "none":
        pf = 0
    else:
        raise ValueError(f"freq_padding must be 'same' or 'none', got {freq_padding!r}")
    Fo = (F + 2 * pf - KF) // freq_stride + 1
    To = conv_time_length(T, KT, time_stride, time_dilation)
    if To < 1:
        need = time_dilation * (KT - 1) + 1
        raise ContextError(f"conv2d: time length {T} shorter than receptive field, need T >= {need}")
    if Fo < 1:
        raise DimensionError(f"conv2d: frequency extent {F} too small for kernel {KF}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pf, pf), (0, 0))) if pf else x.data
    f_span = freq_stride * (Fo - 1) + 1
    t_span = time_stride * (To - 1) + 1
    taps = [(i, j) for i in range(KF) for j in range(KT)]
    cols = np.empty((N, C, KF * KT, Fo, To), dtype=xp.dtype)
    for k, (i, j) in enumerate(taps):
        t0 = j * time_dilation
        cols[:, :, k] = xp[:, :, i:i + f_span:freq_stride, t0:t0 + t_span:time_stride]
    cols = cols.reshape(N, C * KF * KT, Fo, To)
    w2 = kernels.data.reshape(O, C * KF * KT)
    out = np.einsum("ok,nkft->noft", w2, cols, optimize=True)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)

    def back(g):
        gw = np.einsum("noft,nkft->ok", g, cols, optimize=True).reshape(kernels.shape)
        gcols = np.einsum("ok,noft->nkft", w2, g, optimize=True).reshape(N, C, KF * KT, Fo, To)
        gxp = np.zeros_like(xp)
        for k, (i, j) in enumerate(taps):
            t0 = j * time_dilation
            gxp[:, :, i:i + f_span:freq_stride, t0:t0 + t_span:time_stride] += gcols[:, :, k]
        gx = gxp[:, :, pf:pf + F, :] if pf else gxp
        gb = None if bias is None else g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    y = _make(out, parents, back)
    return reshape(y, y.shape[1:]) if squeeze else y


def maxpool2d(x: Tensor, window: tuple[int, int], stride: tuple[int, int] | None = None,
              time_dilation: int = 1) -> Tensor:
    """Max over ``window = (w_f, w_t)``; gradient goes to the first maximum
    in row-major (frequency, time) order within each window."""
    x, squeeze = _as4d(x)
    wf, wt = window
    sf, st = stride if stride is not None else window
    N, C, F, T = x.shape
    Fo = (F - wf) // sf + 1
    To = conv_time_length(T, wt, st, time_dilation)
    if Fo < 1 or To < 1:
        raise DimensionError(
            f"maxpool2d: window {window} (time dilation {time_dilation}) exceeds extent {(F, T)}")
    f_span = sf * (Fo - 1) + 1
    t_span = st * (To - 1) + 1
    taps = [(i, j) for i in range(wf) for j in range(wt)]
    stacked = np.stack([x.data[:, :, i:i + f_span:sf, j * time_dilation:j * time_dilation + t_span:st]
                        for i, j in taps], axis=-1)
    arg = stacked.argmax(axis=-1)
    out = np.take_along_axis(stacked, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros_like(x.data)
        for k, (i, j) in enumerate(taps):
            t0 = j * time_dilation
            gx[:, :, i:i + f_span:sf, t0:t0 + t_span:st] += g * (arg == k)
        return (gx,)

    y = _make(out, (x,), back)
    return reshape(y, y.shape[1:]) if squeeze else y


@dataclass
class BatchNormState:
    """Running statistics for :func:`batchnorm_freq`, one entry per (map, bin)."""

    shape: tuple[int, int]
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = field(init=False)
    running_var: np.ndarray = field(init=False)
    initialized: bool = field(default=False, init=False)

    def __post_init__(self):
        self.running_mean = np.zeros(self.shape)
        self.running_var = np.ones(self.shape)


def batchnorm_freq(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                   mode: str = "train") -> Tensor:
    """Normalise with statistics shared over batch and time only.

    ``x`` is ``N x C x F x T`` (or ``C x F x T``); ``gamma``/``beta`` are ``C x F``.
    """
    x, squeeze = _as4d(x)
    N, C, F, T = x.shape
    if (C, F) != tuple(state.shape) or gamma.shape != (C, F) or beta.shape != (C, F):
        raise DimensionError(f"batchnorm_freq: input maps/bins {(C, F)} vs parameters {gamma.shape}")
    g4 = gamma.data[None, :, :, None]
    if mode == "train":
        mu = x.data.mean(axis=(0, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv
        count = N * T
        unbiased = var[0, :, :, 0] * (count / (count - 1)) if count > 1 else var[0, :, :, 0]
        m = state.momentum
        if state.initialized:
            state.running_mean = (1 - m) * state.running_mean + m * mu[0, :, :, 0]
            state.running_var = (1 - m) * state.running_var + m * unbiased
        else:
            state.running_mean = mu[0, :, :, 0].copy()
            state.running_var = unbiased.copy()
            state.initialized = True

        def back(g):
            gbeta = g.sum(axis=(0, 3))
            ggamma = (g * xhat).sum(axis=(0, 3))
            dxhat = g * g4
            dx = inv / count * (count * dxhat - dxhat.sum(axis=(0, 3), keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=(0, 3), keepdims=True))
            return (dx, ggamma, gbeta)
    elif mode == "eval":
        if not state.initialized:
            raise UninitializedStatisticsError("batchnorm_freq: eval mode before any train-mode pass")
        inv = 1.0 / np.sqrt(state.running_var[None, :, :, None] + state.eps)
        xhat = (x.data - state.running_mean[None, :, :, None]) * inv

        def back(g):
            return (g * g4 * inv, (g * xhat).sum(axis=(0, 3)), g.sum(axis=(0, 3)))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = xhat * g4 + beta.data[None, :, :, None]
    y = _make(out, (x, gamma, beta), back)
    return reshape(y, y.shape[1:]) if squeeze else y
