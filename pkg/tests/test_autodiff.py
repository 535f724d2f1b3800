"""Tape-engine tests: value oracles, finite-difference grads, error contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedscope.autodiff import (
    NonFiniteError,
    Parameter,
    Tensor,
    batch_norm2d,
    cosine_similarity_rows,
    cross_entropy,
    layer_norm,
    log_softmax,
    matmul,
    softmax,
    zero_grads,
)
from gradcheck import away_from_kinks, numeric_grad, rel_error


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# ---- value oracles ---------------------------------------------------------


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(11)
    for m, k, n in [(1, 1, 1), (2, 3, 4), (5, 7, 2), (8, 8, 8)]:
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        got = matmul(t64(a), t64(b)).data
        assert np.abs(got - matmul_loops(a, b)).max() < 1e-12


def test_matmul_batched_matches_per_slice():
    rng = np.random.default_rng(12)
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal((2, 3, 5, 6))
    got = matmul(t64(a), t64(b)).data
    for i in range(2):
        for j in range(3):
            assert np.abs(got[i, j] - matmul_loops(a[i, j], b[i, j])).max() < 1e-12


def test_matmul_nd_by_2d():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((2, 7, 5))
    b = rng.standard_normal((5, 3))
    got = matmul(t64(a), t64(b)).data
    want = np.stack([matmul_loops(a[i], b) for i in range(2)])
    assert np.abs(got - want).max() < 1e-12


def test_matmul_shape_mismatch_raises():
    with pytest.raises(ValueError):
        matmul(t64(np.ones((2, 3))), t64(np.ones((4, 2))))


def test_cross_entropy_matches_scalar_oracle():
    rng = np.random.default_rng(21)
    logits = rng.standard_normal((6, 5)) * 3
    labels = rng.integers(0, 5, 6)
    got = cross_entropy(t64(logits), labels).item()
    total = 0.0
    for i in range(6):
        lse = math.log(sum(math.exp(v) for v in logits[i]))
        total += lse - logits[i, labels[i]]
    assert abs(got - total / 6) < 1e-10


def test_cross_entropy_uniform_logits_is_log_num_classes():
    logits = t64(np.zeros((4, 10)))
    got = cross_entropy(logits, np.arange(4)).item()
    assert abs(got - math.log(10.0)) < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError):
        cross_entropy(t64(np.zeros((2, 3))), np.array([-1, 0]))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(31)
    x = rng.standard_normal((5, 9)) * 10
    s = softmax(t64(x)).data
    assert np.abs(s.sum(axis=1) - 1.0).max() < 1e-12
    s2 = softmax(t64(x + 123.0)).data
    assert np.abs(s - s2).max() < 1e-12
    assert np.abs(np.log(s) - log_softmax(t64(x)).data).max() < 1e-10


def test_layer_norm_normalizes_last_axis():
    rng = np.random.default_rng(41)
    x = rng.standard_normal((3, 4, 16)) * 5 + 2
    g = Parameter("g", np.ones(16))
    b = Parameter("b", np.zeros(16))
    out = layer_norm(t64(x), g, b).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-10
    assert np.abs(out.std(axis=-1) - 1.0).max() < 1e-3  # eps-limited


def test_batch_norm_train_stats_and_running_update():
    rng = np.random.default_rng(51)
    x = rng.standard_normal((6, 3, 4, 4)) * 2 + 1
    g = Parameter("g", np.ones(3))
    b = Parameter("b", np.zeros(3))
    rm = np.zeros(3)
    rv = np.ones(3)
    out = batch_norm2d(t64(x), g, b, rm, rv, training=True).data
    assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    assert np.abs(rm - 0.1 * mu).max() < 1e-12
    assert np.abs(rv - (0.9 + 0.1 * var)).max() < 1e-12
    # eval mode uses the running stats, not the batch
    out_eval = batch_norm2d(t64(x), g, b, rm, rv, training=False).data
    want = (x - rm.reshape(1, 3, 1, 1)) / np.sqrt(rv.reshape(1, 3, 1, 1) + 1e-5)
    assert np.abs(out_eval - want).max() < 1e-12


def test_cosine_similarity_oracle_and_zero_rows():
    a = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
    got = cosine_similarity_rows(t64(a), t64(b)).data
    assert abs(got[0]) < 1e-12
    assert abs(got[1] - 1.0) < 1e-12
    assert abs(got[2]) < 1e-12  # zero-norm row stays finite


def test_gelu_reference_values():
    # gelu(0)=0; gelu is odd-ish around large |x|: gelu(5)~5, gelu(-5)~0
    x = t64(np.array([0.0, 5.0, -5.0]))
    y = x.gelu().data
    assert abs(y[0]) < 1e-12
    assert abs(y[1] - 5.0) < 1e-4
    assert abs(y[2]) < 1e-4


def test_softplus_stable_and_matches_log1p_exp():
    x = np.array([-700.0, -5.0, 0.0, 5.0, 700.0])
    y = t64(x).softplus().data
    assert np.isfinite(y).all()
    for xi, yi in zip(x[1:4], y[1:4]):
        assert abs(yi - math.log1p(math.exp(xi))) < 1e-12
    assert abs(y[0]) < 1e-12
    assert abs(y[4] - 700.0) < 1e-12


# ---- gradient checks -------------------------------------------------------


def check_param_grad(build_loss, params, seeds=3, tol=1e-4):
    for p in params:
        loss = build_loss()
        loss.backward()
        analytic = p.grad.copy()
        zero_grads(params)
        numeric = numeric_grad(lambda: build_loss().item(), p.data)
        assert rel_error(analytic, numeric) < tol, p.name


def test_grad_elementwise_chain():
    rng = np.random.default_rng(61)
    p = Parameter("p", away_from_kinks(rng.standard_normal((4, 5))))
    q = Parameter("q", rng.standard_normal((4, 5)) + 3.0)

    def loss():
        t = (p * q + p / q - q).relu()
        return (t * t).mean()

    check_param_grad(loss, [p, q])


def test_grad_nonlinearities():
    rng = np.random.default_rng(62)
    p = Parameter("p", away_from_kinks(rng.standard_normal((3, 7))))

    def loss():
        return (p.gelu() + p.tanh() + p.softplus() + (p * p + 1.0).sqrt()
                + (p * p + 0.5).log() + (p * 0.1).exp()).sum()

    check_param_grad(loss, [p])


def test_grad_matmul_and_reshape():
    rng = np.random.default_rng(63)
    a = Parameter("a", rng.standard_normal((6, 4)))
    w = Parameter("w", rng.standard_normal((4, 3)))

    def loss():
        h = matmul(a, w).reshape((3, 6)).transpose((1, 0))
        return (h * h).sum() * 0.25

    check_param_grad(loss, [a, w])


def test_grad_softmax_log_softmax():
    rng = np.random.default_rng(64)
    p = Parameter("p", rng.standard_normal((5, 6)))
    v = rng.standard_normal((5, 6))

    def loss_soft():
        return (softmax(p) * t64(v, grad=False)).sum()

    def loss_logsoft():
        return (log_softmax(p) * t64(v, grad=False)).sum()

    check_param_grad(loss_soft, [p])
    check_param_grad(loss_logsoft, [p])


def test_grad_cross_entropy():
    rng = np.random.default_rng(65)
    p = Parameter("p", rng.standard_normal((7, 4)))
    labels = rng.integers(0, 4, 7)

    def loss():
        return cross_entropy(p, labels)

    check_param_grad(loss, [p])


def test_grad_layer_norm():
    rng = np.random.default_rng(66)
    x = Parameter("x", rng.standard_normal((4, 8)))
    g = Parameter("g", rng.standard_normal(8) + 1.5)
    b = Parameter("b", rng.standard_normal(8))
    v = rng.standard_normal((4, 8))

    def loss():
        return (layer_norm(x, g, b) * t64(v, grad=False)).sum()

    check_param_grad(loss, [x, g, b])


def test_grad_batch_norm_train_mode():
    rng = np.random.default_rng(67)
    x = Parameter("x", rng.standard_normal((5, 2, 3, 3)))
    g = Parameter("g", rng.standard_normal(2) + 1.5)
    b = Parameter("b", rng.standard_normal(2))
    v = rng.standard_normal((5, 2, 3, 3))

    def loss():
        rm, rv = np.zeros(2), np.ones(2)
        return (batch_norm2d(x, g, b, rm, rv, training=True) * t64(v, grad=False)).sum()

    check_param_grad(loss, [x, g, b])


def test_grad_mean_over_axes():
    rng = np.random.default_rng(68)
    p = Parameter("p", rng.standard_normal((3, 4, 5)))

    def loss():
        return (p.mean(axis=(1, 2)) * p.mean(axis=(1, 2))).sum()

    check_param_grad(loss, [p])


def test_grad_cosine_similarity():
    rng = np.random.default_rng(69)
    a = Parameter("a", rng.standard_normal((6, 5)))
    b = Parameter("b", rng.standard_normal((6, 5)))

    def loss():
        return cosine_similarity_rows(a, b).sum()

    check_param_grad(loss, [a, b])


# ---- engine contracts ------------------------------------------------------


def test_gradient_accumulates_across_backward_calls():
    p = Parameter("p", np.ones(3))
    (p * p).sum().backward()
    first = p.grad.copy()
    (p * p).sum().backward()
    assert np.allclose(p.grad, 2 * first)


def test_backward_twice_on_same_graph_raises():
    p = Parameter("p", np.ones(3))
    loss = (p * p).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_backward_needs_scalar():
    p = Parameter("p", np.ones(3))
    with pytest.raises(ValueError):
        (p * p).backward()


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.inf]))
    with pytest.raises(NonFiniteError):
        t64(np.array([800.0])).exp()


def test_dtype_mixing_rejected():
    a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    b = Tensor(np.ones(3, dtype=np.float64), requires_grad=True)
    with pytest.raises(TypeError):
        a + b


def test_shared_subexpression_grad_counts_both_paths():
    p = Parameter("p", np.array([2.0]))
    shared = p * p            # d/dp = 2p = 4
    loss = (shared + shared).sum()   # d/dp = 8
    loss.backward()
    assert abs(p.grad[0] - 8.0) < 1e-12


# ---- property tests --------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 2 ** 31 - 1))
def test_broadcast_add_grad_counts_copies(m, n, k, seed):
    rng = np.random.default_rng(seed)
    a = Parameter("a", rng.standard_normal((m, n, k)))
    b = Parameter("b", rng.standard_normal((1, n, 1)))
    (a + b).sum().backward()
    assert np.allclose(a.grad, 1.0)
    assert np.allclose(b.grad, m * k)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
def test_softmax_is_distribution(m, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, n)) * 20
    s = softmax(t64(x)).data
    assert (s >= 0).all()
    assert np.abs(s.sum(axis=1) - 1.0).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_transpose_reshape_grads_are_ones(seed):
    rng = np.random.default_rng(seed)
    p = Parameter("p", rng.standard_normal((3, 4, 5)))
    p.transpose((2, 0, 1)).reshape((5, 12)).sum().backward()
    assert np.array_equal(p.grad, np.ones((3, 4, 5)))
