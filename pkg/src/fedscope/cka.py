"""Linear CKA over minibatches with the unbiased HSIC estimator.

Activations are compared through their linear Gram matrices.  Per
minibatch of n >= 4 probe examples we form K = X X^T and L = Y Y^T, zero
their diagonals (Kt, Lt) and take

  hsic1(K, L) = [ tr(Kt Lt)
                  + (sum Kt)(sum Lt) / ((n-1)(n-2))
                  - (2/(n-2)) * colsum(Kt) . rowsum(Lt) ] / (n(n-3))

Batch estimates accumulate; the final score is
mean(hsic_xy) / sqrt(mean(hsic_xx) * mean(hsic_yy)), undefined (NaN) when
the denominator is not positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .models import Model, forward_with_capture
from .rngs import child_rng


def gram_linear(x: np.ndarray) -> np.ndarray:
    """K = X X^T for row-major activations (n, features), in float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"activations must be 2D, got shape {x.shape}")
    return x @ x.T


def hsic1_unbiased(k: np.ndarray, l: np.ndarray, *, _pair_coeff: float = 2.0) -> float:
    """Unbiased HSIC estimate from two n x n Gram matrices (n >= 4).

    `_pair_coeff` exists so the self-check suite can inject a deliberately
    wrong middle coefficient and prove the oracle comparison catches it.
    """
    n = k.shape[0]
    if k.shape != (n, n) or l.shape != (n, n):
        raise ValueError(f"gram matrices must be square and equal-sized, "
                         f"got {k.shape} and {l.shape}")
    if n < 4:
        raise ValueError(f"unbiased HSIC needs at least 4 examples, got {n}")
    kt = np.array(k, dtype=np.float64)
    lt = np.array(l, dtype=np.float64)
    np.fill_diagonal(kt, 0.0)
    np.fill_diagonal(lt, 0.0)
    trace = float(np.einsum("ij,ji->", kt, lt))
    cross = float(kt.sum(axis=0) @ lt.sum(axis=1))
    total = float(kt.sum()) * float(lt.sum())
    value = (trace + total / ((n - 1.0) * (n - 2.0))
             - (_pair_coeff / (n - 2.0)) * cross)
    return value / (n * (n - 3.0))


class CkaAccumulator:
    """Streams minibatch HSIC estimates for one (x, y) activation pair."""

    def __init__(self):
        self._xy: list[float] = []
        self._xx: list[float] = []
        self._yy: list[float] = []

    @property
    def num_batches(self) -> int:
        return len(self._xy)

    def update(self, x: np.ndarray, y: np.ndarray) -> None:
        if x.shape[0] != y.shape[0]:
            raise ValueError("activation batches must pair the same examples")
        self.update_from_grams(gram_linear(x), gram_linear(y))

    def update_from_grams(self, k: np.ndarray, l: np.ndarray) -> None:
        self._xy.append(hsic1_unbiased(k, l))
        self._xx.append(hsic1_unbiased(k, k))
        self._yy.append(hsic1_unbiased(l, l))

    def finalize(self) -> float:
        """Similarity in [0, 1]-ish; NaN when undefined."""
        if not self._xy:
            raise ValueError("no batches accumulated")
        denom = math.fsum(self._xx) * math.fsum(self._yy)
        if denom <= 0.0:
            return math.nan
        n = self.num_batches
        return math.fsum(self._xy) / n / math.sqrt(
            (math.fsum(self._xx) / n) * (math.fsum(self._yy) / n))


def minibatch_cka(xs: list[np.ndarray], ys: list[np.ndarray]) -> float:
    """CKA of paired activation batches."""
    if len(xs) != len(ys) or not xs:
        raise ValueError("need equal, non-empty batch lists")
    acc = CkaAccumulator()
    for x, y in zip(xs, ys):
        acc.update(x, y)
    return acc.finalize()


def build_probe_minibatches(ds: LabeledDataset, seed: int, per_class: int = 5,
                            num_batches: int = 4) -> list[np.ndarray]:
    """Class-stratified probe batches: per_class examples of every class,
    disjoint across batches, drawn from `ds` by seeded sampling."""
    if per_class < 1 or num_batches < 1:
        raise ValueError("per_class and num_batches must be positive")
    if per_class * ds.num_classes < 4:
        raise ValueError("probe batches need at least 4 examples for HSIC")
    rng = child_rng(seed, "probe-batches")
    need = per_class * num_batches
    per_batch: list[list[np.ndarray]] = [[] for _ in range(num_batches)]
    for cls in range(ds.num_classes):
        pool = np.flatnonzero(ds.labels == cls)
        if pool.size < need:
            raise ValueError(f"class {cls}: need {need} probe examples, "
                             f"dataset has {pool.size}")
        take = rng.choice(pool, size=need, replace=False)
        for b in range(num_batches):
            per_batch[b].append(take[b * per_class:(b + 1) * per_class])
    return [np.sort(np.concatenate(parts)) for parts in per_batch]


def _captures_over_batches(model: Model, ds: LabeledDataset,
                           batches: list[np.ndarray], points: list[str]
                           ) -> list[dict[str, np.ndarray]]:
    out = []
    for idx in batches:
        out.append(forward_with_capture(model, ds.features[idx], points))
    return out


def same_layer_similarity(model_a: Model, model_b: Model, ds: LabeledDataset,
                          batches: list[np.ndarray]) -> dict[str, float]:
    """CKA at each shared capture point, batch-accumulated."""
    names_a = [cp.name for cp in model_a.capture_points]
    names_b = [cp.name for cp in model_b.capture_points]
    if names_a != names_b:
        raise ValueError(f"capture points differ: {names_a} vs {names_b}")
    caps_a = _captures_over_batches(model_a, ds, batches, names_a)
    caps_b = _captures_over_batches(model_b, ds, batches, names_a)
    out = {}
    for name in names_a:
        acc = CkaAccumulator()
        for ca, cb in zip(caps_a, caps_b):
            acc.update(ca[name], cb[name])
        out[name] = acc.finalize()
    return out


def cross_model_similarity(model_a: Model, model_b: Model, ds: LabeledDataset,
                           batches: list[np.ndarray]) -> "CkaMatrix":
    """All-pairs CKA between a's and b's capture points (rows = a)."""
    rows = [cp.name for cp in model_a.capture_points]
    cols = [cp.name for cp in model_b.capture_points]
    caps_a = _captures_over_batches(model_a, ds, batches, rows)
    caps_b = _captures_over_batches(model_b, ds, batches, cols)
    grams_a = [{n: gram_linear(c[n]) for n in rows} for c in caps_a]
    grams_b = [{n: gram_linear(c[n]) for n in cols} for c in caps_b]
    values = np.empty((len(rows), len(cols)))
    for i, rn in enumerate(rows):
        for j, cn in enumerate(cols):
            acc = CkaAccumulator()
            for ga, gb in zip(grams_a, grams_b):
                acc.update_from_grams(ga[rn], gb[cn])
            values[i, j] = acc.finalize()
    return CkaMatrix(tuple(rows), tuple(cols), values)


def overall_similarity(models_a: list[Model], models_b: list[Model],
                       ds: LabeledDataset, batches: list[np.ndarray],
                       capture: str | None = None,
                       row_names: tuple[str, ...] | None = None,
                       col_names: tuple[str, ...] | None = None
                       ) -> "CkaMatrix":
    """Model-by-model CKA at one capture point.

    `capture` defaults to the last capture point — the representation
    feeding the classifier head, i.e. each model's penultimate layer.
    """
    if not models_a or not models_b:
        raise ValueError("need at least one model on each side")
    points = [cp.name for cp in models_a[0].capture_points]
    for m in (*models_a, *models_b):
        if [cp.name for cp in m.capture_points] != points:
            raise ValueError("models disagree on capture points")
    point = points[-1] if capture is None else capture
    if point not in points:
        raise ValueError(f"unknown capture point {point!r}; "
                         f"choose from {points}")

    def grams(model: Model) -> list[np.ndarray]:
        return [gram_linear(forward_with_capture(
            model, ds.features[idx], [point])[point]) for idx in batches]

    ga = [grams(m) for m in models_a]
    gb = ga if models_b is models_a else [grams(m) for m in models_b]
    values = np.empty((len(models_a), len(models_b)))
    for i, gi in enumerate(ga):
        for j, gj in enumerate(gb):
            acc = CkaAccumulator()
            for k, l in zip(gi, gj):
                acc.update_from_grams(k, l)
            values[i, j] = acc.finalize()
    rows = row_names or tuple(f"model{i}" for i in range(len(models_a)))
    cols = col_names or tuple(f"model{j}" for j in range(len(models_b)))
    return CkaMatrix(rows, cols, values)


@dataclass(frozen=True)
class CkaMatrix:
    """Named similarity grid with text and image export."""

    row_names: tuple[str, ...]
    col_names: tuple[str, ...]
    values: np.ndarray    # (rows, cols) float64

    def __post_init__(self):
        if self.values.shape != (len(self.row_names), len(self.col_names)):
            raise ValueError("matrix shape does not match the name lists")
        for name in (*self.row_names, *self.col_names):
            if "," in name or "\n" in name:
                raise ValueError(f"name {name!r} cannot contain ',' or newline")

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.col_names)]
        for name, row in zip(self.row_names, self.values):
            lines.append(name + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "CkaMatrix":
        lines = [ln for ln in text.splitlines() if ln]
        header = lines[0].split(",")
        if header[0] != "":
            raise ValueError("first header cell must be empty")
        cols = tuple(header[1:])
        rows, vals = [], []
        for ln in lines[1:]:
            cells = ln.split(",")
            if len(cells) != len(cols) + 1:
                raise ValueError(f"row {cells[0]!r} has {len(cells) - 1} cells, "
                                 f"expected {len(cols)}")
            rows.append(cells[0])
            vals.append([float(c) for c in cells[1:]])
        return cls(tuple(rows), cols, np.asarray(vals, dtype=np.float64))

    def to_pgm(self) -> bytes:
        """8-bit P5 heatmap; brighter pixels mean higher similarity.

        Values clamp to [0, 1]; undefined (NaN) cells render black.
        """
        v = np.nan_to_num(self.values, nan=0.0)
        v = np.clip(v, 0.0, 1.0)
        pixels = np.round(v * 255.0).astype(np.uint8)
        h, w = pixels.shape
        if h == 0 or w == 0:
            raise ValueError("empty similarity matrix")
        return f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes()
