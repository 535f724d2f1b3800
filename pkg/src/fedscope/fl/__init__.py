"""Federated round loop: broadcast, local training, aggregation, evaluation."""

from .aggregate import fedavg_aggregate
from .config import AlaConfig, ClientEval, FLConfig, MoonConfig, Strategy, default_optimizer_for
from .engine import (
    ClientRoundStat,
    ClientState,
    FederatedEngine,
    RoundReport,
    evaluate,
)
from .strategies import ala_adapt, ala_merge, init_ala_weights, moon_loss

__all__ = [
    "AlaConfig",
    "ClientEval",
    "ClientRoundStat",
    "ClientState",
    "FLConfig",
    "FederatedEngine",
    "MoonConfig",
    "RoundReport",
    "Strategy",
    "ala_adapt",
    "ala_merge",
    "default_optimizer_for",
    "evaluate",
    "fedavg_aggregate",
    "init_ala_weights",
    "moon_loss",
]
