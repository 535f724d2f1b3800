"""Built-in oracle suites: a self-check that the numerics hold on this build."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, cross_entropy
from ..cka import gram_linear, hsic1_unbiased
from ..data import generate_synthetic
from ..fl import fedavg_aggregate, moon_loss
from ..models import Arch, ModelSpec, build_model
from ..partition import PartitionSpec, Scheme, partition, window_labels


@dataclass
class SuiteResult:
    name: str
    passed: int
    failed: int
    failures: list[str]

    @property
    def ok(self) -> bool:
        return self.failed == 0


class _Suite:
    def __init__(self, name: str):
        self.name = name
        self.passed = 0
        self.failures: list[str] = []

    def check(self, ok: bool, label: str) -> None:
        if ok:
            self.passed += 1
        else:
            self.failures.append(label)

    def result(self) -> SuiteResult:
        return SuiteResult(self.name, self.passed, len(self.failures),
                           self.failures)


# ---- HSIC direct-summation oracle -------------------------------------------


def _hsic_direct(k: np.ndarray, l: np.ndarray) -> float:
    """Independent re-derivation: raw index sums, no vectorized shortcuts."""
    n = k.shape[0]
    kt = k.copy()
    lt = l.copy()
    for i in range(n):
        kt[i, i] = 0.0
        lt[i, i] = 0.0
    t1 = sum(kt[i, j] * lt[j, i] for i in range(n) for j in range(n))
    t2 = float(kt.sum()) * float(lt.sum()) / ((n - 1) * (n - 2))
    t3 = sum(float(kt[:, c].sum()) * float(lt[c, :].sum()) for c in range(n))
    return (t1 + t2 - 2.0 * t3 / (n - 2)) / (n * (n - 3))


def suite_hsic(pair_coeff: float = 2.0) -> SuiteResult:
    """100 randomized instances vs. the direct sum; pair_coeff is a test hook
    that perturbs the estimator's cross-sum coefficient to prove the oracle
    has teeth."""
    suite = _Suite("hsic-oracle")
    rng = np.random.default_rng(2024)
    for trial in range(100):
        n = int(rng.integers(4, 13))
        x = rng.standard_normal((n, int(rng.integers(2, 7))))
        y = rng.standard_normal((n, int(rng.integers(2, 7))))
        k, l = gram_linear(x), gram_linear(y)
        got = hsic1_unbiased(k, l, _pair_coeff=pair_coeff)
        want = _hsic_direct(k, l)
        suite.check(abs(got - want) < 1e-10, f"instance {trial} (n={n}): "
                    f"|{got:.3e} - {want:.3e}| >= 1e-10")
    return suite.result()


# ---- gradient checks ---------------------------------------------------------


def _model_grad_ok(spec: ModelSpec, seed: int, probes: int = 3) -> list[str]:
    model = build_model(spec, seed)
    rng = np.random.default_rng(seed + 77)
    x = rng.standard_normal((4,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, size=4).astype(np.int64)

    def loss_tensor() -> Tensor:
        # the squared-projection term gives the contrastive head a gradient
        logits, z = model.forward_and_representation(x, train=False)
        return cross_entropy(logits, y) + (z * z).mean()

    def loss_value() -> float:
        return float(loss_tensor().data)

    for p in model.trainable_parameters():
        p.grad = None
    loss_tensor().backward()

    h = 1e-5
    bad = []
    params = model.trainable_parameters()
    for p in params:
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in rng.choice(flat.size, size=min(probes, flat.size),
                            replace=False):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_value()
            flat[i] = orig - h
            fm = loss_value()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            scale = max(abs(num), abs(gflat[i]), 1e-4)
            if abs(num - gflat[i]) / scale > 1e-4:
                bad.append(f"{spec.arch.name}:{p.name}[{i}] "
                           f"analytic={gflat[i]:.6e} numeric={num:.6e}")
    return bad


def suite_gradients() -> SuiteResult:
    suite = _Suite("gradient-checks")
    small = dict(input_shape=(3, 8, 8), num_classes=6, dtype="float64",
                 projection_dim=8)
    specs = [
        ModelSpec(Arch.TINY_MLP, hidden_dims=(12, 10), **small),
        ModelSpec(Arch.TINY_CNN, num_stages=2, base_channels=6, **small),
        ModelSpec(Arch.TINY_VIT, patch_size=4, embed_dim=12, num_heads=2,
                  num_blocks=2, **small),
    ]
    for spec in specs:
        bad = _model_grad_ok(spec, seed=3)
        suite.check(not bad, "; ".join(bad[:3]) or spec.arch.name)

    rng = np.random.default_rng(5)
    z0 = rng.standard_normal((3, 6))
    glob = rng.standard_normal((3, 6))
    prev = rng.standard_normal((3, 6))
    z = Tensor(z0.copy(), requires_grad=True)
    moon_loss(z, Tensor(glob), Tensor(prev), 0.5).backward()
    h = 1e-5
    worst = 0.0
    flat = z0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(moon_loss(Tensor(z0), Tensor(glob), Tensor(prev), 0.5).data)
        flat[i] = orig - h
        fm = float(moon_loss(Tensor(z0), Tensor(glob), Tensor(prev), 0.5).data)
        flat[i] = orig
        num = (fp - fm) / (2 * h)
        got = z.grad.reshape(-1)[i]
        worst = max(worst, abs(num - got) / max(abs(num), abs(got), 1e-4))
    suite.check(worst < 1e-4, f"contrastive-loss gradient off by {worst:.2e}")
    return suite.result()


# ---- aggregation exactness ----------------------------------------------------


def suite_aggregation() -> SuiteResult:
    suite = _Suite("aggregation-exactness")
    rng = np.random.default_rng(11)
    for trial in range(20):
        shapes = {"w": (5, 3), "b": (3,)}
        ups = [({k: rng.standard_normal(s) for k, s in shapes.items()},
                int(rng.integers(1, 50))) for _ in range(4)]
        out = fedavg_aggregate(ups)
        total = sum(w for _, w in ups)
        ok = True
        for k in shapes:
            want = sum(p[k] * (w / total) for p, w in ups)
            ok &= bool(np.abs(out[k] - want).max() < 1e-12)
        suite.check(ok, f"weighted-mean trial {trial}")

        perm = [ups[i] for i in rng.permutation(len(ups))]
        out2 = fedavg_aggregate(perm)
        suite.check(all(out[k].tobytes() == out2[k].tobytes() for k in out),
                    f"permutation trial {trial}")

        base = ups[0][0]
        clones = [({k: v.copy() for k, v in base.items()},
                   int(rng.integers(1, 9))) for _ in range(3)]
        fixed = fedavg_aggregate(clones)
        suite.check(all(fixed[k].tobytes() == base[k].tobytes() for k in base),
                    f"fixed-point trial {trial}")
    return suite.result()


# ---- partition invariants -----------------------------------------------------


def suite_partition() -> SuiteResult:
    suite = _Suite("partition-invariants")
    ds = generate_synthetic(seed=7, per_class=120, num_classes=10,
                            image_shape=(1, 4, 4))
    for n in (1, 10, 20, 50, 100):
        spec = PartitionSpec(Scheme.DISJOINT_EQUAL, n, seed=3)
        shards = partition(ds, spec)
        seen = np.concatenate([s.indices for s in shards]) if shards else []
        suite.check(len(seen) == len(set(seen.tolist())),
                    f"S1 N={n}: shards overlap")
        windows_ok = all(
            set(np.unique(ds.labels[s.indices]).tolist())
            <= set(window_labels(s.client_id, 4, 10))
            for s in shards)
        suite.check(windows_ok, f"S1 N={n}: label outside client window")
        claimed = set()
        for s in shards:
            claimed |= set(window_labels(s.client_id, 4, 10))
        covered = set(np.unique(ds.labels[np.asarray(seen)]).tolist())
        suite.check(covered == claimed,
                    f"S1 N={n}: claimed labels not fully used")
    for volume in (500, 1000):
        big = generate_synthetic(seed=8, per_class=max(1, volume), num_classes=10,
                                 image_shape=(1, 4, 4))
        spec = PartitionSpec(Scheme.FIXED_VOLUME, 10,
                             per_client_volume=volume, seed=3)
        shards = partition(big, spec)
        suite.check(all(len(s) == volume for s in shards),
                    f"S2 volume={volume}: wrong shard size")
    return suite.result()


# ---- entry point ---------------------------------------------------------------


def run_verify(hsic_pair_coeff: float = 2.0) -> tuple[list[SuiteResult], bool]:
    results = [
        suite_hsic(pair_coeff=hsic_pair_coeff),
        suite_gradients(),
        suite_aggregation(),
        suite_partition(),
    ]
    return results, all(r.ok for r in results)


def format_report(results: list[SuiteResult], ok: bool) -> str:
    lines = [f"suite={r.name} passed={r.passed} failed={r.failed}"
             for r in results]
    for r in results:
        lines += [f"  failure: {r.name}: {msg}" for msg in r.failures[:5]]
    lines.append(f"verify={'PASS' if ok else 'FAIL'}")
    return "\n".join(lines)
