"""SGD-with-momentum and AdamW (decoupled weight decay) on Parameter sets."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import NonFiniteError, Parameter


class OptimizerKind(Enum):
    SGD_MOMENTUM = "sgd"
    ADAMW = "adamw"


class MissingGradError(RuntimeError):
    """step() called on a parameter whose grad was never populated."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind
    learning_rate: float
    weight_decay: float = 0.0
    momentum_or_beta1: float = 0.9
    beta2: float = 0.999          # ADAMW only
    epsilon: float = 1e-8         # ADAMW only

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.momentum_or_beta1 < 1.0:
            raise ValueError("momentum/beta1 must be in [0, 1)")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def sgd_default() -> OptimizerConfig:
    """Convolutional-model default: SGD, lr=0.03, wd=0, momentum=0.9."""
    return OptimizerConfig(OptimizerKind.SGD_MOMENTUM, learning_rate=0.03,
                           weight_decay=0.0, momentum_or_beta1=0.9)


def adamw_default() -> OptimizerConfig:
    """Transformer-model default: AdamW, lr=1e-5, wd=0.05, beta1=0.9."""
    return OptimizerConfig(OptimizerKind.ADAMW, learning_rate=1e-5,
                           weight_decay=0.05, momentum_or_beta1=0.9,
                           beta2=0.999, epsilon=1e-8)


class Optimizer:
    """Holds per-parameter state; `step()` reads grads populated by backward.

    SGD momentum update:   v <- mu*v + g;  w <- w - lr*(v + wd*w)
    AdamW update: decoupled decay w <- w - lr*wd*w first, then the
    bias-corrected adaptive step.
    """

    def __init__(self, params: list[Parameter], cfg: OptimizerConfig):
        self.cfg = cfg
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.t = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}
        for p in self.params:
            if cfg.kind is OptimizerKind.SGD_MOMENTUM:
                self.state[p.name] = {"v": np.zeros_like(p.data)}
            else:
                self.state[p.name] = {"m": np.zeros_like(p.data),
                                      "v": np.zeros_like(p.data)}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        cfg = self.cfg
        self.t += 1
        for p in self.params:
            if p.grad is None:
                raise MissingGradError(f"no gradient for parameter {p.name!r}")
            g = p.grad
            st = self.state[p.name]
            if cfg.kind is OptimizerKind.SGD_MOMENTUM:
                v = st["v"]
                v *= cfg.momentum_or_beta1
                v += g
                p.data = p.data - cfg.learning_rate * (v + cfg.weight_decay * p.data)
            else:
                if cfg.weight_decay:
                    p.data = p.data - cfg.learning_rate * cfg.weight_decay * p.data
                b1, b2 = cfg.momentum_or_beta1, cfg.beta2
                m, v = st["m"], st["v"]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                mhat = m / (1.0 - b1 ** self.t)
                vhat = v / (1.0 - b2 ** self.t)
                p.data = p.data - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError(f"non-finite update for parameter {p.name!r}")
