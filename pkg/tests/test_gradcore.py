import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convasr import gradcore as gc
from convasr.errors import (
    ConsistencyError,
    ContextError,
    DimensionError,
    FormatError,
    LabelError,
    UninitializedStatisticsError,
)
from convasr.gradcore import Tensor, ops


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- matmul / elementwise ---------------------------------------------------

def test_matmul_identity():
    out = gc.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])
    assert gc.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data.item() == 6.0


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        gc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    rep = gc.grad_check(lambda x, y: (gc.matmul(x, y) * gc.matmul(x, y)).sum(), [a, b], tol=1e-6)
    assert rep.passed, rep


def test_elementwise_values():
    assert gc.elementwise("sigmoid", Tensor(0.0)).data == 0.5
    assert gc.elementwise("tanh", Tensor(0.0)).data == 0.0
    np.testing.assert_array_equal(gc.elementwise("relu", Tensor([-1.0, 2.0])).data, [0.0, 2.0])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        gc.elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(DimensionError):
        gc.elementwise("mul", Tensor(np.ones((2, 1))), Tensor(np.ones((2, 3))))


def test_sigmoid_gradient_at_1_3():
    rep = gc.grad_check(lambda x: gc.sigmoid(x).sum(), [np.array([1.3])], tol=1e-6)
    assert rep.passed
    s = 1 / (1 + np.exp(-1.3))
    x = Tensor(np.array([1.3]), requires_grad=True)
    gc.sigmoid(x).sum().backward()
    assert abs(x.grad[0] - s * (1 - s)) < 1e-15


@pytest.mark.parametrize("op", ["add", "mul", "sigmoid", "tanh", "relu"])
def test_elementwise_gradients(op, rng):
    a = rng.normal(size=(3, 5))
    a[np.abs(a) < 0.05] = 0.3  # keep relu away from its kink
    b = rng.normal(size=(3, 5))
    if op in ("add", "mul"):
        rep = gc.grad_check(lambda x, y: gc.tanh(gc.elementwise(op, x, y)).sum(), [a, b])
    else:
        rep = gc.grad_check(lambda x: (gc.elementwise(op, x) * gc.elementwise(op, x)).sum(), [a])
    assert rep.max_rel_err < 1e-5


def test_grad_check_sum_of_squares(rng):
    rep = gc.grad_check(lambda x: (x * x).sum(), [rng.normal(size=(4, 3))], tol=1e-9)
    assert rep.passed, rep.max_rel_err


def test_broadcast_and_shape_ops_gradients(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3,))

    def fn(x, y):
        z = gc.concat([x + y, gc.reshape(x, (3, 4)).T], axis=1)
        w = gc.stack([z[:, 0], z[:, 2] * z[:, 5]], axis=0)
        return (gc.tanh(w) * ops.exp(ops.scale(w, 0.1))).mean() + ops.log(ops.exp(x)).sum()

    assert gc.grad_check(fn, [a, b]).max_rel_err < 1e-6


def test_embedding_accumulates_repeated_ids(rng):
    table = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    out = gc.embedding(table, [1, 1, 3]).sum()
    out.backward()
    np.testing.assert_array_equal(table.grad[:, 0], [0, 2, 0, 1, 0])


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_gradient_with_padding(reverse, rng):
    x = rng.normal(size=(2, 4, 3))
    Wx, Wh, b = rng.normal(size=(3, 8)) * 0.5, rng.normal(size=(2, 8)) * 0.5, rng.normal(size=8) * 0.1
    mask = np.ones((2, 4))
    mask[1, 2:] = 0
    proj = rng.normal(size=(2, 4, 2))
    fn = lambda a, wx, wh, bb: (gc.lstm(a, wx, wh, bb, reverse=reverse, mask=mask) * proj).sum()
    assert gc.grad_check(fn, [x, Wx, Wh, b]).max_rel_err < 1e-5


def test_lstm_padding_carries_state(rng):
    x = rng.normal(size=(1, 4, 3))
    Wx, Wh, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    h = gc.lstm(Tensor(x), Tensor(Wx), Tensor(Wh), Tensor(b), mask=mask).data
    np.testing.assert_array_equal(h[0, 2], h[0, 1])
    np.testing.assert_array_equal(h[0, 3], h[0, 1])
    short = gc.lstm(Tensor(x[:, :2]), Tensor(Wx), Tensor(Wh), Tensor(b)).data
    np.testing.assert_allclose(h[0, :2], short[0], atol=1e-15)


def test_grad_reverse_scales_adjoint():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = gc.grad_reverse(x, 0.1)
    np.testing.assert_array_equal(y.data, x.data)
    (y * y).sum().backward()
    np.testing.assert_allclose(x.grad, -0.1 * 2 * x.data)


# -- losses -------------------------------------------------------------------

def test_softmax_ce_uniform():
    loss = gc.softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
    assert abs(loss.item() - np.log(4)) < 1e-12
    assert abs(loss.item() - 1.386294) < 1e-6


def test_softmax_ce_margin_limit():
    losses = []
    for margin in (1.0, 5.0, 20.0, 50.0):
        logits = np.zeros((2, 3))
        logits[0, 1] = logits[1, 2] = margin
        losses.append(gc.softmax_cross_entropy(Tensor(logits), [1, 2]).item())
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-20


def test_softmax_ce_gradient_and_closed_form(rng):
    x, y = rng.normal(size=(5, 3)), np.array([0, 2, 1, 1, 0])
    assert gc.grad_check(lambda t: gc.softmax_cross_entropy(t, y), [x]).max_rel_err < 1e-5
    t = Tensor(x, requires_grad=True)
    gc.softmax_cross_entropy(t, y).backward()
    p = np.exp(x) / np.exp(x).sum(1, keepdims=True)
    np.testing.assert_allclose(t.grad, (p - np.eye(3)[y]) / 5, atol=1e-15)


def test_softmax_ce_label_error():
    with pytest.raises(LabelError, match="row 1"):
        gc.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_mse_values_and_gradient(rng):
    assert gc.mse(Tensor([1.0, 2.0]), np.array([1.0, 2.0])).item() == 0.0
    assert gc.mse(Tensor([0.0, 0.0]), np.array([1.0, 1.0])).item() == 1.0
    p, t = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    assert gc.grad_check(lambda a: gc.mse(a, t), [p], tol=1e-6).passed
    with pytest.raises(DimensionError):
        gc.mse(Tensor(np.ones(2)), np.ones(3))


def test_masked_mse_ignores_rows(rng):
    p, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    mask = np.array([1, 1, 1, 0, 0])
    full = gc.mse(Tensor(p), t, mask).item()
    assert abs(full - gc.mse(Tensor(p[:3]), t[:3]).item()) < 1e-15


# -- conv2d -----------------------------------------------------------------

def test_conv_time_closed_form():
    x = Tensor(np.ones((1, 2, 7)))
    w = Tensor(np.ones((1, 1, 1, 3)))
    assert gc.conv2d(x, w, time_dilation=2).shape == (1, 2, 3)
    x = Tensor(np.ones((1, 4, 21)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    assert gc.conv2d(gc.conv2d(x, w), w).shape[-1] == 17


def test_conv_time_sweep():
    for T, k, s, d in itertools.product(range(1, 33), (1, 3, 5), (1, 2), (1, 2, 4)):
        x = Tensor(np.zeros((1, 1, 1, T)))
        w = Tensor(np.zeros((1, 1, 1, k)))
        expected = (T - d * (k - 1) - 1) // s + 1
        if expected >= 1:
            assert gc.conv2d(x, w, time_stride=s, time_dilation=d).shape[-1] == expected
        else:
            with pytest.raises(ContextError, match=f"T >= {d * (k - 1) + 1}"):
                gc.conv2d(x, w, time_stride=s, time_dilation=d)


def test_conv_frequency_same_padding_with_stride():
    x = Tensor(np.ones((1, 3, 64, 9)))
    assert gc.conv2d(x, Tensor(np.ones((4, 3, 5, 5)))).shape == (1, 4, 64, 5)
    assert gc.conv2d(x, Tensor(np.ones((4, 3, 3, 3))), freq_stride=2).shape == (1, 4, 32, 7)
    assert gc.conv2d(x, Tensor(np.ones((4, 3, 1, 1))), freq_stride=2).shape == (1, 4, 32, 9)


def test_conv_matches_direct_loops(rng):
    x = rng.normal(size=(2, 3, 6, 11))
    w = rng.normal(size=(4, 3, 3, 2))
    b = rng.normal(size=4)
    out = gc.conv2d(Tensor(x), Tensor(w), Tensor(b), freq_stride=2, time_stride=2, time_dilation=3).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for n, o, f, t in itertools.product(*map(range, ref.shape)):
        acc = b[o]
        for c, i, j in itertools.product(range(3), range(3), range(2)):
            acc += w[o, c, i, j] * xp[n, c, 2 * f + i, 2 * t + 3 * j]
        ref[n, o, f, t] = acc
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_dilated_conv_phase_split_oracle(rng):
    x = rng.normal(size=(1, 2, 5, 20))
    w = rng.normal(size=(3, 2, 3, 3))
    dilated = gc.conv2d(Tensor(x), Tensor(w), time_dilation=2).data
    even = gc.conv2d(Tensor(x[..., 0::2]), Tensor(w)).data
    odd = gc.conv2d(Tensor(x[..., 1::2]), Tensor(w)).data
    inter = np.empty_like(dilated)
    inter[..., 0::2] = even[..., : inter[..., 0::2].shape[-1]]
    inter[..., 1::2] = odd[..., : inter[..., 1::2].shape[-1]]
    assert np.abs(dilated - inter).max() < 1e-12


def test_conv_gradient(rng):
    x, w, b = rng.normal(size=(2, 2, 5, 9)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    fn = lambda a, k, c: gc.tanh(gc.conv2d(a, k, c, freq_stride=2, time_stride=1, time_dilation=2)).sum()
    assert gc.grad_check(fn, [x, w, b]).max_rel_err < 1e-5


# -- maxpool -------------------------------------------------------------------

def test_maxpool_values():
    x = Tensor(np.array([1.0, 3.0, 2.0, 4.0]).reshape(1, 1, 1, 4))
    np.testing.assert_array_equal(gc.maxpool2d(x, (1, 2)).data.ravel(), [3.0, 4.0])


def test_maxpool_tie_goes_to_first_index():
    x = Tensor(np.full((1, 1, 2, 4), 5.0), requires_grad=True)
    y = gc.maxpool2d(x, (2, 2))
    np.testing.assert_array_equal(y.data, np.full((1, 1, 1, 2), 5.0))
    y.sum().backward()
    expected = np.zeros((2, 4))
    expected[0, 0] = expected[0, 2] = 1.0
    np.testing.assert_array_equal(x.grad[0, 0], expected)


def test_maxpool_window_too_large():
    with pytest.raises(DimensionError):
        gc.maxpool2d(Tensor(np.ones((1, 1, 2, 3))), (2, 2), time_dilation=3)


def test_dilated_pool_phase_split_oracle(rng):
    x = rng.normal(size=(1, 3, 4, 17))
    dilated = gc.maxpool2d(Tensor(x), (2, 2), (2, 1), time_dilation=2).data
    even = gc.maxpool2d(Tensor(x[..., 0::2]), (2, 2), (2, 1)).data
    odd = gc.maxpool2d(Tensor(x[..., 1::2]), (2, 2), (2, 1)).data
    inter = np.empty_like(dilated)
    inter[..., 0::2] = even[..., : inter[..., 0::2].shape[-1]]
    inter[..., 1::2] = odd[..., : inter[..., 1::2].shape[-1]]
    np.testing.assert_array_equal(dilated, inter)


def test_maxpool_gradient(rng):
    x = rng.normal(size=(2, 2, 4, 8))
    fn = lambda a: gc.tanh(gc.maxpool2d(a, (2, 2), (2, 1), time_dilation=2)).sum()
    assert gc.grad_check(fn, [x]).max_rel_err < 1e-5


# -- batch norm ----------------------------------------------------------------

def test_batchnorm_train_normalises_each_map_and_bin(rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 11))
    st = gc.BatchNormState((3, 5))
    y = gc.batchnorm_freq(Tensor(x), Tensor(np.ones((3, 5))), Tensor(np.zeros((3, 5))), st).data
    assert np.abs(y.mean(axis=(0, 3))).max() < 1e-10
    var = y.var(axis=(0, 3))
    # eps shrinks the variance by var / (var + eps); exact up to that factor
    np.testing.assert_allclose(var, x.var(axis=(0, 3)) / (x.var(axis=(0, 3)) + 1e-5), atol=1e-12)


def test_batchnorm_constant_slice_is_zero():
    x = np.full((2, 1, 3, 5), 7.0)
    st = gc.BatchNormState((1, 3))
    y = gc.batchnorm_freq(Tensor(x), Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 3))), st).data
    assert np.all(y == 0.0)


def test_batchnorm_eval_requires_statistics():
    st = gc.BatchNormState((1, 2))
    with pytest.raises(UninitializedStatisticsError):
        gc.batchnorm_freq(Tensor(np.ones((1, 1, 2, 3))), Tensor(np.ones((1, 2))),
                          Tensor(np.zeros((1, 2))), st, mode="eval")


def test_batchnorm_running_stats_momentum(rng):
    st = gc.BatchNormState((1, 1))
    g, b = Tensor(np.ones((1, 1))), Tensor(np.zeros((1, 1)))
    x1, x2 = rng.normal(size=(1, 1, 1, 10)), rng.normal(2.0, size=(1, 1, 1, 10))
    gc.batchnorm_freq(Tensor(x1), g, b, st)
    gc.batchnorm_freq(Tensor(x2), g, b, st)
    assert abs(st.running_mean[0, 0] - (0.9 * x1.mean() + 0.1 * x2.mean())) < 1e-12
    assert abs(st.running_var[0, 0] - (0.9 * x1.var(ddof=1) + 0.1 * x2.var(ddof=1))) < 1e-12


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradient(mode, rng):
    x = rng.normal(size=(2, 2, 3, 6))
    gamma, beta = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    st = gc.BatchNormState((2, 3))
    gc.batchnorm_freq(Tensor(x), Tensor(gamma), Tensor(beta), st)
    proj = rng.normal(size=x.shape)
    fn = lambda a, gm, bt: (gc.tanh(gc.batchnorm_freq(a, gm, bt, st, mode)) * proj).sum()
    assert gc.grad_check(fn, [x, gamma, beta], tol=1e-4).passed


# -- optimizer -------------------------------------------------------------------

def test_sgd_step():
    p = {"w": Tensor(np.array([1.0]))}
    gc.step(p, {"w": np.array([2.0])}, gc.OptimizerState(gc.OptimizerConfig("sgd", 0.1)))
    assert abs(p["w"].data[0] - 0.8) < 1e-15


def test_adam_zero_gradient_leaves_parameter():
    p = {"w": Tensor(np.array([1.5, -2.0]))}
    state = gc.OptimizerState(gc.OptimizerConfig("adam", 0.01))
    for _ in range(3):
        gc.step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"].data, [1.5, -2.0])
    assert state.step_count == 3


def test_nesterov_two_step_trajectory():
    lr, mu = 0.1, 0.9
    p = {"w": Tensor(np.array([1.0]))}
    state = gc.OptimizerState(gc.OptimizerConfig("nesterov", lr, momentum=mu))
    g1, g2 = 0.5, -0.25
    gc.step(p, {"w": np.array([g1])}, state)
    gc.step(p, {"w": np.array([g2])}, state)
    v1 = g1
    p1 = 1.0 - lr * (g1 + mu * v1)
    v2 = mu * v1 + g2
    p2 = p1 - lr * (g2 + mu * v2)
    assert p["w"].data[0] == p2


def test_missing_gradient_raises():
    p = {"w": Tensor(np.ones(1)), "b": Tensor(np.ones(1))}
    with pytest.raises(ConsistencyError, match="b"):
        gc.step(p, {"w": np.ones(1)}, gc.OptimizerState(gc.OptimizerConfig()))


def test_optimizer_config_is_frozen():
    cfg = gc.OptimizerConfig("adam", 0.01)
    with pytest.raises(Exception):
        cfg.learning_rate = 0.5


# -- determinism / checkpoint ---------------------------------------------------------

def test_forward_backward_bitwise_deterministic():
    def run():
        r = np.random.default_rng(7)
        x = Tensor(r.normal(size=(2, 2, 4, 9)), requires_grad=True)
        w = Tensor(r.normal(size=(3, 2, 3, 3)), requires_grad=True)
        y = gc.maxpool2d(gc.relu(gc.conv2d(x, w, time_dilation=2)), (2, 1))
        loss = gc.softmax_cross_entropy(gc.reshape(y, (-1, y.shape[-1])), np.zeros(y.size // y.shape[-1], int))
        loss.backward()
        return loss.data.tobytes() + x.grad.tobytes() + w.grad.tobytes()

    assert run() == run()


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"b": rng.normal(size=3), "a.w": rng.normal(size=(2, 4)), "s": np.array(2.5)}
    path = tmp_path / "m.ckpt"
    gc.save_checkpoint(path, params)
    back = gc.load_checkpoint(path)
    assert list(back) == ["a.w", "b", "s"]
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])
    assert path.read_bytes()[:5] == b"GCKPT"
    with pytest.raises(FormatError):
        gc.checkpoint.loads(path.read_bytes()[:-3])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_matmul_tanh_gradient_property(n, k, m, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(n, k)), r.normal(size=(k, m))
    assert gc.grad_check(lambda x, y: gc.tanh(gc.matmul(x, y)).sum(), [a, b]).max_rel_err < 1e-5
