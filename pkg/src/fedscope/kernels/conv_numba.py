"""Numba-jitted conv2d kernels (direct loops, deterministic summation order).

Stride-1 inner loops run over contiguous row slices so LLVM autovectorizes
them; other strides take a generic walk.  No fastmath: summation order is
fixed, results are bit-reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _col_range(pad, b, stride, wd, ow):
    """Output columns z with 0 <= z*stride - pad + b < wd, as [lo, hi)."""
    lo = -((-(pad - b)) // stride)
    if lo < 0:
        lo = 0
    hi = (wd - 1 + pad - b) // stride + 1
    if hi > ow:
        hi = ow
    return lo, hi


@njit(cache=True)
def _conv2d_forward(x, w, stride, pad, out):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = out.shape[2]
    ow = out.shape[3]
    for i in range(n):
        for o in range(f):
            for ci in range(c):
                for a in range(kh):
                    for y in range(oh):
                        ya = y * stride - pad + a
                        if ya < 0 or ya >= h:
                            continue
                        xrow = x[i, ci, ya]
                        orow = out[i, o, y]
                        for b in range(kw):
                            wv = w[o, ci, a, b]
                            lo, hi = _col_range(pad, b, stride, wd, ow)
                            if stride == 1:
                                off = b - pad
                                for z in range(lo, hi):
                                    orow[z] += wv * xrow[z + off]
                            else:
                                zb = lo * stride - pad + b
                                for z in range(lo, hi):
                                    orow[z] += wv * xrow[zb]
                                    zb += stride
    return out


@njit(cache=True)
def _conv2d_grad_weight(gout, x, stride, pad, gw):
    n, c, h, wd = x.shape
    f, _, kh, kw = gw.shape
    oh = gout.shape[2]
    ow = gout.shape[3]
    for o in range(f):
        for ci in range(c):
            for a in range(kh):
                for b in range(kw):
                    lo, hi = _col_range(pad, b, stride, wd, ow)
                    acc = 0.0
                    for i in range(n):
                        for y in range(oh):
                            ya = y * stride - pad + a
                            if ya < 0 or ya >= h:
                                continue
                            grow = gout[i, o, y]
                            xrow = x[i, ci, ya]
                            if stride == 1:
                                off = b - pad
                                for z in range(lo, hi):
                                    acc += grow[z] * xrow[z + off]
                            else:
                                zb = lo * stride - pad + b
                                for z in range(lo, hi):
                                    acc += grow[z] * xrow[zb]
                                    zb += stride
                    gw[o, ci, a, b] = acc
    return gw


@njit(cache=True)
def _conv2d_grad_input(gout, w, stride, pad, gx):
    n, c, h, wd = gx.shape
    f, _, kh, kw = w.shape
    oh = gout.shape[2]
    ow = gout.shape[3]
    for i in range(n):
        for o in range(f):
            for ci in range(c):
                for a in range(kh):
                    for y in range(oh):
                        ya = y * stride - pad + a
                        if ya < 0 or ya >= h:
                            continue
                        grow = gout[i, o, y]
                        xgrow = gx[i, ci, ya]
                        for b in range(kw):
                            wv = w[o, ci, a, b]
                            lo, hi = _col_range(pad, b, stride, wd, ow)
                            if stride == 1:
                                off = b - pad
                                for z in range(lo, hi):
                                    xgrow[z + off] += wv * grow[z]
                            else:
                                zb = lo * stride - pad + b
                                for z in range(lo, hi):
                                    xgrow[zb] += wv * grow[z]
                                    zb += stride
    return gx


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {cw}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d output would be empty: input {h}x{wd}, "
                         f"kernel {kh}x{kw}, stride {stride}, pad {pad}")
    out = np.zeros((n, f, oh, ow), dtype=x.dtype)
    return _conv2d_forward(x, w, stride, pad, out)


def conv2d_grad_weight(gout: np.ndarray, x: np.ndarray, kh: int, kw: int,
                       stride: int, pad: int) -> np.ndarray:
    f = gout.shape[1]
    c = x.shape[1]
    gw = np.zeros((f, c, kh, kw), dtype=gout.dtype)
    return _conv2d_grad_weight(gout, x, stride, pad, gw)


def conv2d_grad_input(gout: np.ndarray, w: np.ndarray, h: int, wd: int,
                      stride: int, pad: int) -> np.ndarray:
    n = gout.shape[0]
    c = w.shape[1]
    gx = np.zeros((n, c, h, wd), dtype=gout.dtype)
    return _conv2d_grad_input(gout, w, stride, pad, gx)
