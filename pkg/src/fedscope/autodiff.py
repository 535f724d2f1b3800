"""Reverse-mode tensor engine on numpy storage.

Tensors record the ops that produced them; ``Tensor.backward()`` walks the
graph in reverse topological order and accumulates gradients into every
reachable tensor with ``requires_grad``.  Gradients accumulate across calls;
zeroing is the caller's job (see ``zero_grads``).

Every op validates its output for NaN/Inf and raises ``NonFiniteError``
instead of propagating silently.  All math is done in the dtype of the
inputs (float64 or float32); mixing dtypes in one op is an error.
"""

from __future__ import annotations

import numpy as np

from . import kernels

_SQRT_2_OVER_PI = 0.7978845608028654
_GELU_CUBIC = 0.044715


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {what}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_done")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _bwd=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._bwd = _bwd
        self._done = False
        _check_finite(arr, "tensor data")

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- graph helpers -------------------------------------------------

    def _accumulate(self, contribution: np.ndarray) -> None:
        _check_finite(contribution, "gradient")
        if self.grad is None:
            self.grad = contribution.copy()
        else:
            self.grad += contribution

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        Only valid on scalars; calling twice on the same node is an error
        (re-run the forward pass instead).
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if self._done:
            raise RuntimeError("backward called twice on the same graph; re-run forward")
        self._done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)
                node._bwd = None  # free closures; graph is single-use

    # ---- elementwise arithmetic -----------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.dtype != self.dtype:
                raise TypeError(f"dtype mismatch: {self.dtype} vs {other.dtype}")
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out_data = self.data + other.data
        out = Tensor(out_data, self.requires_grad or other.requires_grad,
                     (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._bwd = bwd
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(-g)
        out._bwd = bwd
        return out

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor(self.data - other.data,
                     self.requires_grad or other.requires_grad, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))
        out._bwd = bwd
        return out

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor(self.data * other.data,
                     self.requires_grad or other.requires_grad, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._bwd = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = Tensor(self.data / other.data,
                     self.requires_grad or other.requires_grad, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                # divide twice instead of squaring the denominator, which
                # underflows to 0/0 for tiny divisors in 32-bit
                other._accumulate(_unbroadcast(
                    -g * self.data / other.data / other.data, other.shape))
        out._bwd = bwd
        return out

    # ---- matmul ----------------------------------------------------------

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # ---- shape ops -------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = Tensor(self.data.reshape(shape), self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old))
        out._bwd = bwd
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        out = Tensor(np.ascontiguousarray(self.data.transpose(axes)),
                     self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.ascontiguousarray(g.transpose(inv)))
        out._bwd = bwd
        return out

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     self.requires_grad, (self,))
        shape = self.shape

        def bwd(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape).astype(self.dtype, copy=True))
        out._bwd = bwd
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = 1
            for a in axes:
                n *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * np.asarray(1.0 / n, dtype=self.dtype)

    # ---- elementwise nonlinearities ---------------------------------------

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0))
        out._bwd = bwd
        return out

    def gelu(self) -> "Tensor":
        """Tanh-approximation GELU."""
        x = self.data
        u = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * x ** 3)
        t = np.tanh(u)
        out = Tensor(0.5 * x * (1.0 + t), self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * x * x)
                self._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))
        out._bwd = bwd
        return out

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = Tensor(t, self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - t * t))
        out._bwd = bwd
        return out

    def sqrt(self) -> "Tensor":
        r = np.sqrt(self.data)
        out = Tensor(r, self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / r)
        out._bwd = bwd
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor(e, self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * e)
        out._bwd = bwd
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g / self.data)
        out._bwd = bwd
        return out

    def softplus(self) -> "Tensor":
        """log(1 + exp(x)), evaluated stably for large |x|."""
        x = self.data
        out_data = np.where(x > 30.0, x + np.log1p(np.exp(-np.abs(x))),
                            np.log1p(np.exp(np.minimum(x, 30.0))))
        out = Tensor(out_data.astype(x.dtype), self.requires_grad, (self,))

        def bwd(g):
            if self.requires_grad:
                sig = 1.0 / (1.0 + np.exp(-x))
                self._accumulate(g * sig)
        out._bwd = bwd
        return out


class Parameter(Tensor):
    """Named trainable tensor; names key FedAvg aggregation and checkpoints."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(np.asarray(data), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def zero_grads(params) -> None:
    """Reset accumulated grads (explicit-zero accumulation contract)."""
    for p in params:
        p.grad = None


# ---- free-function ops ----------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2D@2D, ND@2D (linear map on last axis), or batched
    ND@ND with identical leading dims."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensors")
    if a.dtype != b.dtype:
        raise TypeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if b.data.ndim > 2 and a.data.ndim != b.data.ndim:
        raise ValueError(f"batched matmul rank mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad, (a, b))

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))
    out._bwd = bwd
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`; rows sum to 1."""
    x = t.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, t.requires_grad, (t,))

    def bwd(g):
        if t.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            t._accumulate(s * (g - dot))
    out._bwd = bwd
    return out


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = Tensor(ls, t.requires_grad, (t,))

    def bwd(g):
        if t.requires_grad:
            soft = np.exp(ls)
            t._accumulate(g - soft * g.sum(axis=axis, keepdims=True))
    out._bwd = bwd
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax at the true class.  labels: int vector."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects 2D logits, got {logits.shape}")
    m, c = logits.shape
    if labels.shape != (m,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {m}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    x = logits.data
    mx = x.max(axis=1, keepdims=True)
    shifted = x - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(m)
    out = Tensor(np.asarray(-logp[rows, labels].mean(), dtype=x.dtype),
                 logits.requires_grad, (logits,))

    def bwd(g):
        if logits.requires_grad:
            soft = np.exp(logp)
            soft[rows, labels] -= 1.0
            logits._accumulate((float(g) / m) * soft)
    out._bwd = bwd
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = gamma.data * xhat + beta.data
    out = Tensor(out_data, x.requires_grad or gamma.requires_grad or beta.requires_grad,
                 (x, gamma, beta))

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0).reshape(gamma.shape))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0).reshape(beta.shape))
        if x.requires_grad:
            gy = g * gamma.data
            mean_gy = gy.mean(axis=-1, keepdims=True)
            mean_gy_xhat = (gy * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gy - mean_gy - xhat * mean_gy_xhat))
    out._bwd = bwd
    return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch norm on (N,C,H,W).

    In training mode, batch statistics normalize and the running arrays are
    updated in place (outside the graph); in eval mode running statistics
    normalize.
    """
    xd = x.data
    c = xd.shape[1]
    axes = (0, 2, 3)
    gview = gamma.data.reshape(1, c, 1, 1)
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= (1.0 - momentum)
        running_var += momentum * var.astype(running_var.dtype)
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).reshape(1, c, 1, 1)
    xhat = (xd - mu.reshape(1, c, 1, 1)) * inv
    out = Tensor(gview * xhat + beta.data.reshape(1, c, 1, 1),
                 x.requires_grad or gamma.requires_grad or beta.requires_grad,
                 (x, gamma, beta))

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes).reshape(gamma.shape))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes).reshape(beta.shape))
        if x.requires_grad:
            gy = g * gview
            if training:
                mean_gy = gy.mean(axis=axes, keepdims=True)
                mean_gy_xhat = (gy * xhat).mean(axis=axes, keepdims=True)
                x._accumulate(inv * (gy - mean_gy - xhat * mean_gy_xhat))
            else:
                x._accumulate(inv * gy)
    out._bwd = bwd
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2D convolution (cross-correlation) via the selected kernel backend."""
    h, wd = x.shape[2], x.shape[3]
    kh, kw = w.shape[2], w.shape[3]
    out_data = kernels.conv2d_forward(x.data, w.data, stride, pad)
    if b is not None:
        out_data = out_data + b.data.reshape(1, -1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    req = any(p.requires_grad for p in parents)
    out = Tensor(out_data, req, parents)

    def bwd(g):
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w._accumulate(kernels.conv2d_grad_weight(g, x.data, kh, kw, stride, pad))
        if x.requires_grad:
            x._accumulate(kernels.conv2d_grad_input(g, w.data, h, wd, stride, pad))
    out._bwd = bwd
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); w is (in, out)."""
    out = matmul(x, w)
    if b is not None:
        out = out + b
    return out


def cosine_similarity_rows(a: Tensor, b: Tensor, eps: float = 1e-24) -> Tensor:
    """Row-wise cosine similarity of two (m, d) tensors.

    `eps` sits inside the sqrt so zero-norm rows stay finite.
    """
    dot = (a * b).sum(axis=1)
    na = ((a * a).sum(axis=1) + np.asarray(eps, dtype=a.dtype)).sqrt()
    nb = ((b * b).sum(axis=1) + np.asarray(eps, dtype=b.dtype)).sqrt()
    return dot / (na * nb)


def relu(t: Tensor) -> Tensor:
    return t.relu()


def gelu(t: Tensor) -> Tensor:
    return t.gelu()


def softplus(t: Tensor) -> Tensor:
    return t.softplus()


def tanh(t: Tensor) -> Tensor:
    return t.tanh()
