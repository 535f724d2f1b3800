"""Non-IID client sharding over a labeled dataset.

Each client n sees a window of ``labels_per_client`` consecutive labels
starting at ``n mod num_classes`` (wrapping).  Two schemes:

* DISJOINT_EQUAL: every label's pool is shuffled once and split evenly
  (sizes within one) across the clients whose window claims it; shards
  never share an example.
* FIXED_VOLUME: every client draws exactly ``per_client_volume`` examples
  without replacement from its window's pool; shards may overlap across
  clients, never within one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import LabeledDataset
from .rngs import child_rng


class Scheme(Enum):
    DISJOINT_EQUAL = "S1"
    FIXED_VOLUME = "S2"


@dataclass(frozen=True)
class PartitionSpec:
    scheme: Scheme
    num_clients: int
    labels_per_client: int = 4
    per_client_volume: int = 0     # FIXED_VOLUME only
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("need at least one client")
        if self.labels_per_client < 1:
            raise ValueError("need at least one label per client")
        if self.scheme is Scheme.FIXED_VOLUME and self.per_client_volume < 1:
            raise ValueError("FIXED_VOLUME needs per_client_volume >= 1")


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray      # sorted unique positions into the dataset
    window: tuple[int, ...]  # labels this client may hold

    def __len__(self) -> int:
        return self.indices.size


def window_labels(client_id: int, labels_per_client: int,
                  num_classes: int) -> tuple[int, ...]:
    """Consecutive labels (mod num_classes) starting at client_id mod C."""
    start = client_id % num_classes
    span = min(labels_per_client, num_classes)
    return tuple(sorted((start + j) % num_classes for j in range(span)))


def partition(ds: LabeledDataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.labels_per_client > ds.num_classes:
        raise ValueError("labels_per_client exceeds the number of classes")
    windows = [window_labels(n, spec.labels_per_client, ds.num_classes)
               for n in range(spec.num_clients)]
    if spec.scheme is Scheme.DISJOINT_EQUAL:
        per_client = _split_disjoint(ds, spec, windows)
    else:
        per_client = _sample_fixed(ds, spec, windows)
    return [ClientShard(n, per_client[n], windows[n])
            for n in range(spec.num_clients)]


def _split_disjoint(ds, spec, windows) -> list[np.ndarray]:
    claims: dict[int, list[int]] = {}
    for n, win in enumerate(windows):
        for lab in win:
            claims.setdefault(lab, []).append(n)
    shards: list[list[np.ndarray]] = [[] for _ in range(spec.num_clients)]
    for lab in sorted(claims):
        pool = np.flatnonzero(ds.labels == lab)
        rng = child_rng(spec.seed, "partition-disjoint", lab)
        pool = rng.permutation(pool)
        takers = claims[lab]
        chunks = np.array_split(pool, len(takers))
        for client, chunk in zip(takers, chunks):
            shards[client].append(chunk)
    return [np.sort(np.concatenate(parts)) if parts
            else np.empty(0, dtype=np.int64)
            for parts in shards]


def _sample_fixed(ds, spec, windows) -> list[np.ndarray]:
    out = []
    for n, win in enumerate(windows):
        pool = np.flatnonzero(np.isin(ds.labels, win))
        if pool.size < spec.per_client_volume:
            raise ValueError(
                f"client {n}: window pool has {pool.size} examples, "
                f"fewer than per_client_volume={spec.per_client_volume}")
        rng = child_rng(spec.seed, "partition-volume", n)
        take = rng.choice(pool, size=spec.per_client_volume, replace=False)
        out.append(np.sort(take))
    return out
