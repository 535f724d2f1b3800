"""Convolution kernel tests: loop oracle, backend agreement, env selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from fedscope.kernels import active_backend, conv_numpy

try:
    from fedscope.kernels import conv_numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

BACKENDS = [("numpy", conv_numpy)]
if HAVE_NUMBA:
    BACKENDS.append(("numba", conv_numba))


def conv_forward_oracle(x, w, stride, pad):
    """Direct six-loop convolution (cross-correlation) in python."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (xp[b, ci, i * stride + u, j * stride + v]
                                        * w[co, ci, u, v])
                    out[b, co, i, j] = acc
    return out


CASES = [
    (1, 1, 1, 5, 5, 3, 3, 1, 0),
    (2, 3, 4, 8, 8, 3, 3, 1, 1),
    (2, 2, 3, 9, 7, 3, 3, 2, 1),
    (1, 2, 2, 6, 6, 1, 1, 1, 0),
    (3, 1, 2, 10, 10, 5, 5, 2, 2),
]


@pytest.mark.parametrize("name,mod", BACKENDS, ids=[b[0] for b in BACKENDS])
@pytest.mark.parametrize("case", CASES)
def test_forward_matches_loop_oracle(name, mod, case):
    n, cin, cout, h, wd, kh, kw, stride, pad = case
    rng = np.random.default_rng(hash(case) % 2 ** 31)
    x = rng.standard_normal((n, cin, h, wd))
    w = rng.standard_normal((cout, cin, kh, kw))
    got = mod.conv2d_forward(x, w, stride, pad)
    want = conv_forward_oracle(x, w, stride, pad)
    assert got.shape == want.shape
    assert np.abs(got - want).max() < 1e-12


@pytest.mark.parametrize("case", CASES)
def test_grads_match_finite_difference_of_forward(case):
    n, cin, cout, h, wd, kh, kw, stride, pad = case
    rng = np.random.default_rng(1 + hash(case) % 2 ** 31)
    x = rng.standard_normal((n, cin, h, wd))
    w = rng.standard_normal((cout, cin, kh, kw))
    gout = rng.standard_normal(conv_numpy.conv2d_forward(x, w, stride, pad).shape)

    gw = conv_numpy.conv2d_grad_weight(gout, x, kh, kw, stride, pad)
    gx = conv_numpy.conv2d_grad_input(gout, w, h, wd, stride, pad)

    def obj(xa, wa):
        return float((conv_numpy.conv2d_forward(xa, wa, stride, pad) * gout).sum())

    eps = 1e-6
    for arr, grad in ((x, gx), (w, gw)):
        flat = arr.reshape(-1)
        for i in rng.choice(flat.size, size=min(12, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            fp = obj(x, w)
            flat[i] = orig - eps
            fm = obj(x, w)
            flat[i] = orig
            fd = (fp - fm) / (2 * eps)
            assert abs(fd - grad.reshape(-1)[i]) < 1e-4


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")
@pytest.mark.parametrize("case", CASES)
def test_backends_agree(case):
    n, cin, cout, h, wd, kh, kw, stride, pad = case
    rng = np.random.default_rng(2 + hash(case) % 2 ** 31)
    x = rng.standard_normal((n, cin, h, wd))
    w = rng.standard_normal((cout, cin, kh, kw))
    f_np = conv_numpy.conv2d_forward(x, w, stride, pad)
    f_nb = conv_numba.conv2d_forward(x, w, stride, pad)
    assert np.abs(f_np - f_nb).max() < 1e-12
    gout = rng.standard_normal(f_np.shape)
    assert np.abs(conv_numpy.conv2d_grad_weight(gout, x, kh, kw, stride, pad)
                  - conv_numba.conv2d_grad_weight(gout, x, kh, kw, stride, pad)).max() < 1e-12
    assert np.abs(conv_numpy.conv2d_grad_input(gout, w, h, wd, stride, pad)
                  - conv_numba.conv2d_grad_input(gout, w, h, wd, stride, pad)).max() < 1e-12


def test_float32_path_preserves_dtype():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    for _, mod in BACKENDS:
        out = mod.conv2d_forward(x, w, 1, 1)
        assert out.dtype == np.float32


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("FEDSCOPE_KERNELS", None)
    else:
        env["FEDSCOPE_KERNELS"] = env_value
    code = "from fedscope.kernels import active_backend; print(active_backend())"
    return subprocess.run([sys.executable, "-c", code], env=env,
                          capture_output=True, text=True)


def test_env_flag_selects_backend():
    assert active_backend() in ("numpy", "numba")
    r = _backend_in_subprocess("numpy")
    assert r.stdout.strip() == "numpy"
    if HAVE_NUMBA:
        r = _backend_in_subprocess("numba")
        assert r.stdout.strip() == "numba"


def test_env_flag_rejects_unknown_value():
    r = _backend_in_subprocess("cuda")
    assert r.returncode != 0
    assert "FEDSCOPE_KERNELS" in r.stderr
