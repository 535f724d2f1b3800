"""Strategy-specific pieces: the contrastive penalty and adaptive merging.

moon_loss contrasts the current representation against the global model's
(positive) and the previous local model's (negative):

  per-sample  -log[ exp(cos(z, z_glob)/t) /
                    (exp(cos(z, z_glob)/t) + exp(cos(z, z_prev)/t)) ]

computed as softplus((cos(z, z_prev) - cos(z, z_glob)) / t) so that equal
references give exactly ln 2 and nothing overflows.

ala_adapt personalizes the broadcast: blocks below `start_layer` are taken
from the global model outright; every other parameter is blended as
merged = (1 - A) . local + A . global with A fitted by plain gradient
descent on the local training loss (w.r.t. A only), entries clipped to
[0, 1].  A starts at all-ones and persists across rounds.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..autodiff import Tensor, cosine_similarity_rows, cross_entropy, zero_grads
from ..models import Model
from ..rngs import child_rng
from .config import AlaConfig

log = logging.getLogger("fedscope.fl")

ModelParams = dict[str, np.ndarray]


def moon_loss(z: Tensor, z_glob: Tensor, z_prev: Tensor,
              temperature: float) -> Tensor:
    """Batch-mean contrastive penalty over projection-head outputs."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if z.shape != z_glob.shape or z.shape != z_prev.shape:
        raise ValueError(f"representation shapes differ: {z.shape}, "
                         f"{z_glob.shape}, {z_prev.shape}")
    cos_g = cosine_similarity_rows(z, z_glob)
    cos_p = cosine_similarity_rows(z, z_prev)
    return ((cos_p - cos_g) * float(1.0 / temperature)).softplus().mean()


def _split_names(model: Model, start_layer: int) -> tuple[list[str], list[str]]:
    lower, upper = [], []
    for name in model.param_names():
        (lower if model.block_index(name) < start_layer else upper).append(name)
    return lower, upper


def init_ala_weights(model: Model, start_layer: int) -> ModelParams:
    """Fresh all-ones blend weights for every adaptable parameter."""
    _, upper = _split_names(model, start_layer)
    by_name = {p.name: p.data for p in model.parameters()}
    return {n: np.ones_like(by_name[n]) for n in upper}


def ala_merge(local: ModelParams, global_params: ModelParams,
              a_weights: ModelParams, lower: list[str]) -> ModelParams:
    """Blend per parameter; exact copies at the A = 0 and A = 1 endpoints."""
    out: ModelParams = {}
    for name in local:
        if name in lower or name not in a_weights:
            out[name] = global_params[name].copy()
        else:
            a = a_weights[name]
            if np.all(a == 1.0):
                out[name] = global_params[name].copy()
            elif np.all(a == 0.0):
                out[name] = local[name].copy()
            else:
                out[name] = local[name] * (1.0 - a) + global_params[name] * a
    return out


def ala_adapt(model: Model, local: ModelParams, global_params: ModelParams,
              features: np.ndarray, labels: np.ndarray, cfg: AlaConfig,
              a_weights: ModelParams | None, *, batch_size: int, seed: int,
              client_id: int, round_index: int
              ) -> tuple[ModelParams, ModelParams, int, bool]:
    """Fit the blend weights on this client's data and return the merge.

    Returns (merged params, updated A, steps taken, converged flag).  The
    loop stops once the elementwise standard deviation of the change in A
    between successive iterations falls under cfg.std_threshold, or at
    cfg.max_steps (logged as a warning, not an error).
    """
    if features.shape[0] == 0:
        raise ValueError("cannot adapt on an empty shard")
    if set(local) != set(global_params):
        raise ValueError("local/global parameter names differ")
    lower, upper = _split_names(model, cfg.start_layer)
    if a_weights is None:
        a_weights = {n: np.ones_like(local[n]) for n in upper}
    else:
        a_weights = {n: a.copy() for n, a in a_weights.items()}

    n = features.shape[0]
    take = max(1, math.ceil(n * cfg.sample_percent / 100.0))
    rng = child_rng(seed, "ala-sample", client_id, round_index)
    sample = rng.permutation(n)[:take]

    diffs = {name: global_params[name].astype(np.float64)
             - local[name].astype(np.float64) for name in upper}
    params_by_name = {p.name: p for p in model.parameters()}
    converged = False
    steps = 0
    for step in range(cfg.max_steps):
        merged = ala_merge(local, global_params, a_weights, lower)
        model.set_params(merged)
        trainable = model.trainable_parameters()
        zero_grads(trainable)
        lo = (step * batch_size) % take
        idx = sample[lo:lo + batch_size]
        if idx.size == 0:
            idx = sample[:batch_size]
        loss = cross_entropy(model.forward(features[idx], train=True)[0],
                             labels[idx])
        loss.backward()
        steps = step + 1
        deltas = []
        for name in upper:
            p = params_by_name[name]
            if p.grad is None:
                continue
            grad_a = p.grad.astype(np.float64) * diffs[name]
            new_a = np.clip(a_weights[name].astype(np.float64)
                            - cfg.learning_rate * grad_a, 0.0, 1.0)
            new_a = new_a.astype(a_weights[name].dtype)
            deltas.append((new_a - a_weights[name]).ravel())
            a_weights[name] = new_a
        if deltas and float(np.std(np.concatenate(deltas))) < cfg.std_threshold:
            converged = True
            break
    if not converged:
        log.warning("client %d round %d: blend-weight fit hit the %d-step cap",
                    client_id, round_index, cfg.max_steps)
    merged = ala_merge(local, global_params, a_weights, lower)
    return merged, a_weights, steps, converged
