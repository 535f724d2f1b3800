"""Sample-weighted parameter averaging, exact and order-independent.

The mean is computed as anchor + sum_n w_n (theta_n - anchor) with the
anchor taken from a content-digest canonical ordering and the deviations
accumulated in float64 with Neumaier compensation.  Consequences:

* permuting the update list cannot change a single bit of the result
  (the summation order is canonical, not caller order);
* when every update is identical the deviations are exactly zero and the
  output is bit-for-bit the shared input.
"""

from __future__ import annotations

import hashlib

import numpy as np

ModelParams = dict[str, np.ndarray]


def _digest(params: ModelParams, weight: int) -> bytes:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].tobytes())
    h.update(str(weight).encode())
    return h.digest()


def fedavg_aggregate(updates: list[tuple[ModelParams, int]]) -> ModelParams:
    """Weighted mean of parameter sets: sum_n (D_n / D) * theta_n by name."""
    if not updates:
        raise ValueError("nothing to aggregate")
    names = sorted(updates[0][0])
    for params, weight in updates:
        if sorted(params) != names:
            raise ValueError("parameter name sets differ across updates")
        if weight <= 0:
            raise ValueError(f"non-positive sample count {weight}")
        for n in names:
            if params[n].shape != updates[0][0][n].shape:
                raise ValueError(f"shape mismatch for parameter {n!r}")
    total = sum(w for _, w in updates)

    order = sorted(range(len(updates)),
                   key=lambda i: _digest(updates[i][0], updates[i][1]))
    anchor = updates[order[0]][0]
    out: ModelParams = {}
    for name in names:
        base = anchor[name].astype(np.float64)
        s = np.zeros_like(base)
        c = np.zeros_like(base)
        for i in order:
            params, weight = updates[i]
            dev = (params[name].astype(np.float64) - base) * (weight / total)
            t = s + dev
            c += np.where(np.abs(s) >= np.abs(dev), (s - t) + dev, (dev - t) + s)
            s = t
        out[name] = (base + (s + c)).astype(anchor[name].dtype)
    return out
