"""Model zoo: TINY_MLP, TINY_CNN (residual), TINY_VIT, with activation capture.

Every model exposes:
  * named parameters (dotted, stable order input->output),
  * capture points (block outputs) for representation analysis,
  * a projection head producing the contrastive representation,
  * a per-parameter block index (0 = input stem, last = classifier head)
    used by layer-wise personalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..autodiff import Parameter, Tensor, relu
from ..rngs import child_rng, truncated_normal
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvDown,
    LayerNorm,
    Linear,
    ResidualBlock,
    TransformerBlock,
)


class Arch(Enum):
    TINY_MLP = "TINY_MLP"
    TINY_CNN = "TINY_CNN"
    TINY_VIT = "TINY_VIT"


@dataclass(frozen=True)
class CapturePoint:
    name: str
    ordering_index: int
    feature_dim: int


@dataclass(frozen=True)
class ModelSpec:
    arch: Arch
    input_shape: tuple[int, int, int] = (3, 32, 32)
    num_classes: int = 10
    dtype: str = "float32"
    # TINY_MLP
    hidden_dims: tuple[int, ...] = (256, 128)
    # TINY_CNN
    num_stages: int = 3
    base_channels: int = 22
    # TINY_VIT
    patch_size: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    num_blocks: int = 4
    mlp_ratio: int = 4
    # contrastive projection head
    projection_dim: int = 64

    def __post_init__(self):
        c, h, w = self.input_shape
        if min(c, h, w) <= 0 or self.num_classes <= 0:
            raise ValueError("bad input shape or class count")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.arch is Arch.TINY_MLP and not self.hidden_dims:
            raise ValueError("TINY_MLP needs at least one hidden layer")
        if self.arch is Arch.TINY_CNN:
            if self.num_stages < 1 or self.base_channels < 1:
                raise ValueError("bad CNN geometry")
            if h % (2 ** (self.num_stages - 1)) or w % (2 ** (self.num_stages - 1)):
                raise ValueError("input size must survive the downsampling stages")
        if self.arch is Arch.TINY_VIT:
            if h % self.patch_size or w % self.patch_size:
                raise ValueError("patch size must tile the input")
            if self.embed_dim % self.num_heads:
                raise ValueError("embed dim must divide evenly across heads")


class Model:
    """A built network: parameter registry plus an arch-specific forward."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.np_dtype = np.dtype(spec.dtype)
        rng = child_rng(seed, "model-init", _arch_code(spec.arch))
        self._params: dict[str, Parameter] = {}
        self._block_index: dict[str, int] = {}
        self.capture_points: list[CapturePoint] = []
        builder = {Arch.TINY_MLP: self._build_mlp,
                   Arch.TINY_CNN: self._build_cnn,
                   Arch.TINY_VIT: self._build_vit}[spec.arch]
        builder(rng)
        feat_dim = self._feat_dim
        self.proj1 = Linear("proj.fc1", rng, feat_dim, spec.projection_dim,
                            self.np_dtype, init="he")
        self.proj2 = Linear("proj.fc2", rng, spec.projection_dim,
                            spec.projection_dim, self.np_dtype, init="he")
        head_block = self.num_blocks_total - 1
        self._register(self.proj1.params() + self.proj2.params(), head_block)

    # -- construction ------------------------------------------------------

    def _register(self, params: list[Parameter], block: int) -> None:
        for p in params:
            if p.name in self._params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            self._params[p.name] = p
            self._block_index[p.name] = block

    def _build_mlp(self, rng) -> None:
        spec = self.spec
        in_dim = int(np.prod(spec.input_shape))
        self.hidden: list[Linear] = []
        dims = (in_dim,) + spec.hidden_dims
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            layer = Linear(f"hidden{i}.fc", rng, d_in, d_out, self.np_dtype)
            self.hidden.append(layer)
            self._register(layer.params(), i)
            self.capture_points.append(CapturePoint(f"hidden_{i}", i, d_out))
        self._feat_dim = spec.hidden_dims[-1]
        self.num_blocks_total = len(spec.hidden_dims) + 1
        self.head = Linear("head.fc", rng, self._feat_dim, spec.num_classes,
                           self.np_dtype)
        self._register(self.head.params(), self.num_blocks_total - 1)

    def _build_cnn(self, rng) -> None:
        spec = self.spec
        c_in = spec.input_shape[0]
        self.stem_conv = Conv2d("stem.conv", rng, c_in, spec.base_channels, 3,
                                self.np_dtype)
        self.stem_bn = BatchNorm2d("stem.bn", spec.base_channels, self.np_dtype)
        self._register(self.stem_conv.params() + self.stem_bn.params(), 0)
        self.downs: list[ConvDown | None] = []
        self.res_blocks: list[ResidualBlock] = []
        ch = spec.base_channels
        for s in range(spec.num_stages):
            if s == 0:
                self.downs.append(None)
            else:
                down = ConvDown(f"stage{s}.down", rng, ch, ch * 2, self.np_dtype)
                ch *= 2
                self.downs.append(down)
                self._register(down.params(), s + 1)
            block = ResidualBlock(f"stage{s}.res", rng, ch, self.np_dtype)
            self.res_blocks.append(block)
            self._register(block.params(), s + 1)
            side = spec.input_shape[1] // (2 ** s)
            self.capture_points.append(
                CapturePoint(f"stage_{s}", s + 1, ch * side * side))
        self._feat_dim = ch
        self.num_blocks_total = spec.num_stages + 2
        self.head = Linear("head.fc", rng, ch, spec.num_classes, self.np_dtype)
        self._register(self.head.params(), self.num_blocks_total - 1)

    def _build_vit(self, rng) -> None:
        spec = self.spec
        c, h, w = spec.input_shape
        p = spec.patch_size
        self.n_tokens = (h // p) * (w // p)
        patch_dim = c * p * p
        self.embed = Linear("embed.fc", rng, patch_dim, spec.embed_dim,
                            self.np_dtype, init="trunc")
        pos0 = truncated_normal(rng, (self.n_tokens, spec.embed_dim),
                                std=0.02).astype(self.np_dtype)
        self.pos = Parameter("embed.pos", pos0)
        self._register(self.embed.params() + [self.pos], 0)
        self.blocks: list[TransformerBlock] = []
        for i in range(spec.num_blocks):
            blk = TransformerBlock(f"block{i}", rng, spec.embed_dim,
                                   spec.num_heads, spec.mlp_ratio, self.np_dtype)
            self.blocks.append(blk)
            self._register(blk.params(), i + 1)
            self.capture_points.append(
                CapturePoint(f"block_{i}", i + 1,
                             self.n_tokens * spec.embed_dim))
        self._feat_dim = spec.embed_dim
        self.num_blocks_total = spec.num_blocks + 2
        self.final_ln = LayerNorm("head.ln", spec.embed_dim, self.np_dtype)
        self.head = Linear("head.fc", rng, spec.embed_dim, spec.num_classes,
                           self.np_dtype)
        self._register(self.final_ln.params() + self.head.params(),
                       self.num_blocks_total - 1)

    # -- forward -----------------------------------------------------------

    def _patchify(self, x: Tensor) -> Tensor:
        c, h, w = self.spec.input_shape
        p = self.spec.patch_size
        m = x.data.shape[0]
        t = x.reshape((m, c, h // p, p, w // p, p))
        t = t.transpose((0, 2, 4, 1, 3, 5))
        return t.reshape((m, self.n_tokens, c * p * p))

    def _features(self, x: Tensor, train: bool,
                  capture: dict[str, np.ndarray] | None,
                  wanted: set[str]) -> Tensor:
        def grab(name: str, t: Tensor):
            if capture is not None and name in wanted:
                m = t.data.shape[0]
                capture[name] = np.ascontiguousarray(
                    t.data.reshape(m, -1), dtype=np.float64)

        spec = self.spec
        if spec.arch is Arch.TINY_MLP:
            m = x.data.shape[0]
            t = x.reshape((m, int(np.prod(spec.input_shape))))
            for i, layer in enumerate(self.hidden):
                t = relu(layer(t))
                grab(f"hidden_{i}", t)
            return t
        if spec.arch is Arch.TINY_CNN:
            t = relu(self.stem_bn(self.stem_conv(x), train))
            for s in range(spec.num_stages):
                if self.downs[s] is not None:
                    t = self.downs[s](t, train)
                t = self.res_blocks[s](t, train)
                grab(f"stage_{s}", t)
            return t.mean(axis=(2, 3))
        # TINY_VIT
        t = self.embed(self._patchify(x)) + self.pos
        for i, blk in enumerate(self.blocks):
            t = blk(t)
            grab(f"block_{i}", t)
        return self.final_ln(t.mean(axis=1))

    def forward(self, batch: np.ndarray, train: bool = False,
                capture: list[str] | None = None
                ) -> tuple[Tensor, dict[str, np.ndarray]]:
        """Logits plus any requested block activations as (m, dim) arrays."""
        wanted = set(capture or ())
        known = {cp.name for cp in self.capture_points}
        unknown = wanted - known
        if unknown:
            raise KeyError(f"unknown capture point(s): {sorted(unknown)}")
        x = Tensor(np.ascontiguousarray(batch, dtype=self.np_dtype),
                   requires_grad=False)
        grabbed: dict[str, np.ndarray] = {}
        feats = self._features(x, train, grabbed if wanted else None, wanted)
        return self.head(feats), grabbed

    def representation(self, batch: np.ndarray, train: bool = False) -> Tensor:
        """Projection-head output used by the contrastive objective."""
        x = Tensor(np.ascontiguousarray(batch, dtype=self.np_dtype),
                   requires_grad=False)
        feats = self._features(x, train, None, set())
        return self.proj2(relu(self.proj1(feats)))

    def forward_and_representation(self, batch: np.ndarray, train: bool = False
                                   ) -> tuple[Tensor, Tensor]:
        """Logits and projection output sharing one feature pass."""
        x = Tensor(np.ascontiguousarray(batch, dtype=self.np_dtype),
                   requires_grad=False)
        feats = self._features(x, train, None, set())
        return self.head(feats), self.proj2(relu(self.proj1(feats)))

    # -- parameter plumbing --------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def param_names(self) -> list[str]:
        return list(self._params.keys())

    def block_index(self, name: str) -> int:
        return self._block_index[name]

    def get_params(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self._params):
            missing = sorted(set(self._params) - set(values))
            extra = sorted(set(values) - set(self._params))
            raise KeyError(f"parameter name mismatch: missing={missing} extra={extra}")
        for k, p in self._params.items():
            v = np.asarray(values[k])
            if v.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k!r}: "
                                 f"{v.shape} vs {p.data.shape}")
            # always copy: batch-norm running stats mutate in place during
            # train-mode forwards and must never write back into the caller
            p.data = np.array(v, dtype=self.np_dtype, order="C")

    def set_trainable_grad(self, enabled: bool) -> None:
        """Toggle gradient tracking (frozen reference copies skip the tape)."""
        for p in self._params.values():
            p.requires_grad = enabled and p.trainable

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params.values())


def _arch_code(arch: Arch) -> int:
    return {Arch.TINY_MLP: 1, Arch.TINY_CNN: 2, Arch.TINY_VIT: 3}[arch]


def build_model(spec: ModelSpec, seed: int) -> Model:
    """Construct a model with seed-determined weights."""
    return Model(spec, seed)


def forward_with_capture(model: Model, batch: np.ndarray,
                         points: list[str]) -> dict[str, np.ndarray]:
    """Run inference and return the requested block activations."""
    _, grabbed = model.forward(batch, train=False, capture=points)
    return grabbed
