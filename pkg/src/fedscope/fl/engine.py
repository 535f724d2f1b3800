"""The federated round loop.

Per round: broadcast the server parameters, (FEDALA) adaptively merge them
into each client's personal model, train locally, then sample-weighted
average the surviving updates.  A client whose training produces a
non-finite value is logged and dropped from that round's aggregation (its
examples leave the denominator too).

Determinism: every random draw comes from a stream derived from
(seed, purpose, client, round, epoch), so trajectories replay bit-for-bit
and a run can resume from a snapshot without replaying history.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from ..autodiff import NonFiniteError, cross_entropy
from ..data import LabeledDataset
from ..models import Model, ModelSpec, build_model
from ..optim import Optimizer, OptimizerConfig
from ..partition import ClientShard
from ..rngs import child_rng
from .aggregate import ModelParams, fedavg_aggregate
from .config import ClientEval, FLConfig, Strategy
from .strategies import ala_adapt, moon_loss

log = logging.getLogger("fedscope.fl")


@dataclass
class ClientState:
    client_id: int
    shard: ClientShard
    local_params: ModelParams
    prev_round_params: ModelParams    # MOON negative anchor
    ala_weights: ModelParams | None = None


@dataclass(frozen=True)
class ClientRoundStat:
    client_id: int
    loss: float
    accuracy: float
    samples: int
    epoch_wall_ms: float
    failed: bool = False


@dataclass(frozen=True)
class RoundReport:
    round_index: int
    per_client: tuple[ClientRoundStat, ...]
    server_accuracy: float
    wall_ms: float


def evaluate(model: Model, params: ModelParams, ds: LabeledDataset,
             batch_size: int = 256) -> float:
    """Fraction of argmax-correct predictions (ties -> lowest class index)."""
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model.set_params(params)
    correct = 0
    for lo in range(0, len(ds), batch_size):
        x = ds.features[lo:lo + batch_size]
        y = ds.labels[lo:lo + batch_size]
        logits, _ = model.forward(x, train=False)
        correct += int((np.argmax(logits.data, axis=1) == y).sum())
    return correct / len(ds)


class FederatedEngine:
    """Owns the server parameters, client states and scratch models."""

    def __init__(self, spec: ModelSpec, train_ds: LabeledDataset,
                 holdout_ds: LabeledDataset, shards: list[ClientShard],
                 fl_cfg: FLConfig, opt_cfg: OptimizerConfig):
        if not shards:
            raise ValueError("need at least one client shard")
        for s in shards:
            if len(s) == 0:
                raise ValueError(f"client {s.client_id} has an empty shard")
        self.spec = spec
        self.train_ds = train_ds
        self.holdout_ds = holdout_ds
        self.fl_cfg = fl_cfg
        self.opt_cfg = opt_cfg
        self.model = build_model(spec, fl_cfg.seed)
        self.server_params = self.model.get_params()
        # frozen scratch copies: contrastive references and evaluation
        self.ref_global = build_model(spec, fl_cfg.seed)
        self.ref_prev = build_model(spec, fl_cfg.seed)
        self.ref_global.set_trainable_grad(False)
        self.ref_prev.set_trainable_grad(False)
        self.clients = [
            ClientState(s.client_id, s,
                        local_params=dict(self.server_params),
                        prev_round_params=dict(self.server_params))
            for s in shards
        ]
        self.completed_rounds = 0

    # -- internals -----------------------------------------------------------

    def _moon_active(self) -> bool:
        return (self.fl_cfg.strategy is Strategy.MOON
                and self.fl_cfg.moon.mu > 0.0)

    def _optimizer_params(self):
        params = self.model.trainable_parameters()
        if self._moon_active():
            return params
        # without the contrastive term the projection head gets no gradient
        return [p for p in params if not p.name.startswith("proj.")]

    def _local_train(self, state: ClientState, start_params: ModelParams,
                     round_index: int) -> tuple[ModelParams, float, int]:
        cfg = self.fl_cfg
        self.model.set_params(start_params)
        moon = self._moon_active()
        if moon:
            self.ref_global.set_params(start_params)
            self.ref_prev.set_params(state.prev_round_params)
        opt = Optimizer(self._optimizer_params(), self.opt_cfg)
        idx = state.shard.indices
        feats, labs = self.train_ds.features, self.train_ds.labels
        losses = []
        steps = 0
        for epoch in range(cfg.client_epochs):
            order = child_rng(cfg.seed, "batch-order", state.client_id,
                              round_index, epoch).permutation(idx.size)
            for lo in range(0, idx.size, cfg.batch_size):
                rows = idx[order[lo:lo + cfg.batch_size]]
                x, y = feats[rows], labs[rows]
                opt.zero_grad()
                if moon:
                    logits, z = self.model.forward_and_representation(x, train=True)
                    z_glob = self.ref_global.representation(x, train=True)
                    z_prev = self.ref_prev.representation(x, train=True)
                    loss = cross_entropy(logits, y) + moon_loss(
                        z, z_glob, z_prev, cfg.moon.temperature) * float(cfg.moon.mu)
                else:
                    logits, _ = self.model.forward(x, train=True)
                    loss = cross_entropy(logits, y)
                loss.backward()
                opt.step()
                losses.append(loss.item())
                steps += 1
        return self.model.get_params(), float(np.mean(losses)), steps

    def _client_accuracy(self, params: ModelParams,
                         state: ClientState) -> float:
        mode = self.fl_cfg.client_eval
        if mode is ClientEval.NONE:
            return math.nan
        if mode is ClientEval.HOLDOUT:
            return evaluate(self.ref_prev, params, self.holdout_ds)
        shard_ds = self.train_ds.subset(state.shard.indices, "client-eval")
        return evaluate(self.ref_prev, params, shard_ds)

    # -- public API ------------------------------------------------------------

    def run_round(self, round_index: int) -> RoundReport:
        cfg = self.fl_cfg
        t_round = time.perf_counter()
        broadcast = self.server_params
        updates: list[tuple[ModelParams, int]] = []
        stats: list[ClientRoundStat] = []
        for state in self.clients:
            t_client = time.perf_counter()
            try:
                if cfg.strategy is Strategy.FEDALA:
                    merged, a_new, _, _ = ala_adapt(
                        self.model, state.local_params, broadcast,
                        self.train_ds.features[state.shard.indices],
                        self.train_ds.labels[state.shard.indices],
                        cfg.ala, state.ala_weights,
                        batch_size=cfg.batch_size, seed=cfg.seed,
                        client_id=state.client_id, round_index=round_index)
                    state.ala_weights = a_new
                    start = merged
                else:
                    start = broadcast
                new_params, mean_loss, _ = self._local_train(
                    state, start, round_index)
            except NonFiniteError as err:
                log.warning("client %d failed round %d (%s); excluded from "
                            "aggregation", state.client_id, round_index, err)
                stats.append(ClientRoundStat(state.client_id, math.nan,
                                             math.nan, 0, 0.0, failed=True))
                continue
            wall_ms = ((time.perf_counter() - t_client) * 1000.0
                       / cfg.client_epochs)
            state.local_params = new_params
            state.prev_round_params = new_params
            updates.append((new_params, len(state.shard)))
            stats.append(ClientRoundStat(
                state.client_id, mean_loss,
                self._client_accuracy(new_params, state),
                len(state.shard), wall_ms))
        if not updates:
            raise RuntimeError(f"round {round_index}: every client failed")
        self.server_params = fedavg_aggregate(updates)
        server_acc = evaluate(self.ref_prev, self.server_params, self.holdout_ds)
        wall = (time.perf_counter() - t_round) * 1000.0
        self.completed_rounds = round_index + 1
        return RoundReport(round_index, tuple(stats), server_acc, wall)

    def run(self, rounds: int, start_round: int = 0, on_round=None
            ) -> list[RoundReport]:
        reports = []
        for r in range(start_round, rounds):
            report = self.run_round(r)
            reports.append(report)
            if on_round is not None:
                on_round(self, report)
        return reports

    # -- snapshot plumbing (used for checkpoint/resume) -------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"server/{k}": v for k, v in self.server_params.items()}
        for st in self.clients:
            pre = f"client{st.client_id}"
            out.update({f"{pre}/local/{k}": v for k, v in st.local_params.items()})
            out.update({f"{pre}/prev/{k}": v
                        for k, v in st.prev_round_params.items()})
            if st.ala_weights is not None:
                out.update({f"{pre}/ala/{k}": v
                            for k, v in st.ala_weights.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray],
                          completed_rounds: int) -> None:
        def bucket(prefix):
            plen = len(prefix)
            return {k[plen:]: v for k, v in arrays.items()
                    if k.startswith(prefix)}

        server = bucket("server/")
        if set(server) != set(self.server_params):
            raise ValueError("snapshot parameter names do not match the model")
        self.server_params = server
        for st in self.clients:
            pre = f"client{st.client_id}"
            local = bucket(f"{pre}/local/")
            prev = bucket(f"{pre}/prev/")
            if set(local) != set(self.server_params) or \
               set(prev) != set(self.server_params):
                raise ValueError(f"snapshot is missing state for client "
                                 f"{st.client_id}")
            st.local_params = local
            st.prev_round_params = prev
            ala = bucket(f"{pre}/ala/")
            st.ala_weights = ala if ala else None
        self.completed_rounds = completed_rounds
