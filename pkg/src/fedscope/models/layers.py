"""Parameterized layers composed into the zoo models.

Each layer owns named Parameters (dotted prefix) and is callable on
Tensors.  Weight init draws from an explicit Generator so construction is
reproducible from a seed alone.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import (
    Parameter,
    Tensor,
    batch_norm2d,
    conv2d,
    gelu,
    layer_norm,
    linear,
    matmul,
    relu,
    softmax,
)
from ..rngs import truncated_normal


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def _trunc(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    return truncated_normal(rng, shape, std=0.02).astype(dtype)


class Linear:
    """y = x @ w + b with either He-normal or truncated-normal init."""

    def __init__(self, prefix: str, rng: np.random.Generator, in_dim: int,
                 out_dim: int, dtype, init: str = "he"):
        if init == "he":
            w0 = _he_normal(rng, (in_dim, out_dim), in_dim, dtype)
        else:
            w0 = _trunc(rng, (in_dim, out_dim), dtype)
        self.w = Parameter(f"{prefix}.w", w0)
        self.b = Parameter(f"{prefix}.b", np.zeros(out_dim, dtype=dtype))

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNorm:
    def __init__(self, prefix: str, dim: int, dtype):
        self.g = Parameter(f"{prefix}.g", np.ones(dim, dtype=dtype))
        self.b = Parameter(f"{prefix}.b", np.zeros(dim, dtype=dtype))

    def params(self) -> list[Parameter]:
        return [self.g, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)


class BatchNorm2d:
    """Per-channel batch norm; running stats are non-trainable parameters."""

    def __init__(self, prefix: str, channels: int, dtype):
        self.g = Parameter(f"{prefix}.g", np.ones(channels, dtype=dtype))
        self.b = Parameter(f"{prefix}.b", np.zeros(channels, dtype=dtype))
        self.rm = Parameter(f"{prefix}.rm", np.zeros(channels, dtype=dtype),
                            trainable=False)
        self.rv = Parameter(f"{prefix}.rv", np.ones(channels, dtype=dtype),
                            trainable=False)

    def params(self) -> list[Parameter]:
        return [self.g, self.b, self.rm, self.rv]

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return batch_norm2d(x, self.g, self.b, self.rm.data, self.rv.data,
                            training=train)


class Conv2d:
    def __init__(self, prefix: str, rng: np.random.Generator, in_ch: int,
                 out_ch: int, ksize: int, dtype, stride: int = 1, pad: int = 1):
        fan_in = in_ch * ksize * ksize
        self.w = Parameter(f"{prefix}.w",
                           _he_normal(rng, (out_ch, in_ch, ksize, ksize), fan_in, dtype))
        self.b = Parameter(f"{prefix}.b", np.zeros(out_ch, dtype=dtype))
        self.stride = stride
        self.pad = pad

    def params(self) -> list[Parameter]:
        return [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class MultiHeadSelfAttention:
    """Standard multi-head self-attention over (batch, tokens, dim)."""

    def __init__(self, prefix: str, rng: np.random.Generator, dim: int,
                 num_heads: int, dtype):
        if dim % num_heads != 0:
            raise ValueError("embed dim must divide evenly across heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.wq = Linear(f"{prefix}.q", rng, dim, dim, dtype, init="trunc")
        self.wk = Linear(f"{prefix}.k", rng, dim, dim, dtype, init="trunc")
        self.wv = Linear(f"{prefix}.v", rng, dim, dim, dtype, init="trunc")
        self.wo = Linear(f"{prefix}.o", rng, dim, dim, dtype, init="trunc")

    def params(self) -> list[Parameter]:
        return self.wq.params() + self.wk.params() + self.wv.params() + self.wo.params()

    def _split(self, t: Tensor, m: int, n: int) -> Tensor:
        # (m, n, dim) -> (m, heads, n, head_dim)
        return t.reshape((m, n, self.num_heads, self.head_dim)).transpose((0, 2, 1, 3))

    def probs(self, x: Tensor) -> Tensor:
        """Attention weights (m, heads, tokens, tokens); rows sum to one."""
        m, n, _ = x.data.shape
        q = self._split(self.wq(x), m, n)
        k = self._split(self.wk(x), m, n)
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        return softmax(scores, axis=-1)

    def __call__(self, x: Tensor) -> Tensor:
        m, n, _ = x.data.shape
        a = self.probs(x)
        v = self._split(self.wv(x), m, n)
        out = matmul(a, v)                                # (m, heads, n, hd)
        out = out.transpose((0, 2, 1, 3)).reshape((m, n, self.dim))
        return self.wo(out)


class TransformerBlock:
    """Pre-norm block: x + attn(ln(x)), then h + mlp(ln(h)) with GELU."""

    def __init__(self, prefix: str, rng: np.random.Generator, dim: int,
                 num_heads: int, mlp_ratio: int, dtype):
        self.ln1 = LayerNorm(f"{prefix}.ln1", dim, dtype)
        self.attn = MultiHeadSelfAttention(f"{prefix}.attn", rng, dim, num_heads, dtype)
        self.ln2 = LayerNorm(f"{prefix}.ln2", dim, dtype)
        self.fc1 = Linear(f"{prefix}.fc1", rng, dim, dim * mlp_ratio, dtype, init="trunc")
        self.fc2 = Linear(f"{prefix}.fc2", rng, dim * mlp_ratio, dim, dtype, init="trunc")

    def params(self) -> list[Parameter]:
        return (self.ln1.params() + self.attn.params() + self.ln2.params()
                + self.fc1.params() + self.fc2.params())

    def __call__(self, x: Tensor) -> Tensor:
        h = x + self.attn(self.ln1(x))
        return h + self.fc2(gelu(self.fc1(self.ln2(h))))


class ResidualBlock:
    """x + bn2(conv2(relu(bn1(conv1(x))))); identity map when convs are zero."""

    def __init__(self, prefix: str, rng: np.random.Generator, channels: int, dtype):
        self.conv1 = Conv2d(f"{prefix}.conv1", rng, channels, channels, 3, dtype)
        self.bn1 = BatchNorm2d(f"{prefix}.bn1", channels, dtype)
        self.conv2 = Conv2d(f"{prefix}.conv2", rng, channels, channels, 3, dtype)
        self.bn2 = BatchNorm2d(f"{prefix}.bn2", channels, dtype)

    def params(self) -> list[Parameter]:
        return (self.conv1.params() + self.bn1.params()
                + self.conv2.params() + self.bn2.params())

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        h = relu(self.bn1(self.conv1(x), train))
        return x + self.bn2(self.conv2(h), train)


class ConvDown:
    """Strided conv + BN + ReLU; halves spatial size, changes channel count."""

    def __init__(self, prefix: str, rng: np.random.Generator, in_ch: int,
                 out_ch: int, dtype, stride: int = 2):
        self.conv = Conv2d(f"{prefix}.conv", rng, in_ch, out_ch, 3, dtype, stride=stride)
        self.bn = BatchNorm2d(f"{prefix}.bn", out_ch, dtype)

    def params(self) -> list[Parameter]:
        return self.conv.params() + self.bn.params()

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return relu(self.bn(self.conv(x), train))
