"""Federated training configuration types and defaults."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from ..models import Arch
from ..optim import OptimizerConfig, adamw_default, sgd_default


class Strategy(Enum):
    FEDAVG = "FEDAVG"
    MOON = "MOON"
    FEDALA = "FEDALA"


class ClientEval(Enum):
    """What the per-client accuracy column measures."""

    SHARD = "shard"        # trained local model on its own shard
    HOLDOUT = "holdout"    # trained local model on the global holdout
    NONE = "none"          # skip (reported as NaN)


@dataclass(frozen=True)
class MoonConfig:
    temperature: float = 0.5
    mu: float = 5.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")


@dataclass(frozen=True)
class AlaConfig:
    sample_percent: float = 100.0   # share of the shard used to fit A
    start_layer: int = 1            # blocks below this copy straight from global
    std_threshold: float = 0.05
    learning_rate: float = 1.0
    max_steps: int = 50

    def __post_init__(self):
        if not 0 < self.sample_percent <= 100:
            raise ValueError("sample_percent must be in (0, 100]")
        if self.start_layer < 0:
            raise ValueError("start_layer must be non-negative")
        if self.std_threshold <= 0:
            raise ValueError("std_threshold must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class FLConfig:
    strategy: Strategy = Strategy.FEDAVG
    rounds: int = 100
    client_epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    client_eval: ClientEval = ClientEval.SHARD
    moon: MoonConfig = field(default_factory=MoonConfig)
    ala: AlaConfig = field(default_factory=AlaConfig)

    def __post_init__(self):
        if self.rounds < 1 or self.client_epochs < 1 or self.batch_size < 1:
            raise ValueError("rounds, client_epochs and batch_size must be positive")


def default_optimizer_for(arch: Arch) -> OptimizerConfig:
    """Transformers get AdamW; convolutional/MLP models get SGD-momentum."""
    if arch is Arch.TINY_VIT:
        return adamw_default()
    return sgd_default()
