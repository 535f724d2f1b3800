"""Pure-numpy conv2d kernels (im2col + BLAS matmul)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d output would be empty: input {h}x{w}, "
                         f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    return oh, ow


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N*OH*OW, C*KH*KW) patch matrix."""
    n, c, h, w = x.shape
    oh, ow = _out_hw(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, OH, OW, KH, KW) -> rows indexed by (n, oh, ow)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {cw}")
    oh, ow = _out_hw(h, wd, kh, kw, stride, pad)
    cols = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(f, -1).T
    return out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2).copy()


def conv2d_grad_weight(gout: np.ndarray, x: np.ndarray, kh: int, kw: int,
                       stride: int, pad: int) -> np.ndarray:
    n, f, oh, ow = gout.shape
    c = x.shape[1]
    cols = _im2col(x, kh, kw, stride, pad)
    g = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
    return (g.T @ cols).reshape(f, c, kh, kw)


def conv2d_grad_input(gout: np.ndarray, w: np.ndarray, h: int, wd: int,
                      stride: int, pad: int) -> np.ndarray:
    n, f, oh, ow = gout.shape
    _, c, kh, kw = w.shape
    g = gout.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
    gcols = (g @ w.reshape(f, -1)).reshape(n, oh, ow, c, kh, kw)
    gx = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx)
