"""Deterministic RNG stream derivation.

Every random draw in the package comes from a generator keyed by
(root seed, domain string, integer tags...).  Streams are independent of
evaluation order, so resuming a run mid-way replays the exact bit stream.
"""

from __future__ import annotations

import numpy as np

# Domain strings are hashed into stable integers so that adding a new domain
# never perturbs existing streams.
def _domain_code(domain: str) -> int:
    h = 2166136261
    for ch in domain.encode("utf-8"):
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def child_rng(seed: int, domain: str, *tags: int) -> np.random.Generator:
    """Generator for (seed, domain, tags), independent of any other key."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _domain_code(domain)]
    entropy.extend(int(t) & 0xFFFFFFFFFFFFFFFF for t in tags)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02,
                     bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) resampled until all values lie within ±bound·std."""
    out = rng.standard_normal(shape)
    mask = np.abs(out) > bound
    while mask.any():
        out[mask] = rng.standard_normal(int(mask.sum()))
        mask = np.abs(out) > bound
    return out * std
