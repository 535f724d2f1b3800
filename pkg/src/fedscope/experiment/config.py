"""Line-oriented experiment configuration.

Grammar: one `key = value` per line; blank lines and lines starting with
`#` are ignored.  Keys are dotted section paths (`fl.rounds`), values are
plain tokens: ints, floats, enum names, comma lists (no spaces required),
`HxWxC`-style shapes, or `none`/`all` sentinels.  Unknown and duplicate
keys are errors; every default is filled in and echoed back verbatim by
:func:`serialize_config`, whose output is the canonical form that gets
hashed into the run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..fl.config import AlaConfig, ClientEval, FLConfig, MoonConfig, Strategy, default_optimizer_for
from ..models import Arch, ModelSpec
from ..optim import OptimizerConfig, OptimizerKind
from ..partition import PartitionSpec, Scheme


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"                      # synthetic | cifar10
    per_class: int = 100                         # synthetic train size per class
    holdout_per_class: int = 20
    num_classes: int = 10
    image_shape: tuple[int, int, int] = (3, 32, 32)
    noise_std: float = 0.08
    train_paths: tuple[str, ...] = ()            # cifar10 only
    test_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"dataset.kind must be synthetic or cifar10, "
                              f"got '{self.kind}'")
        if self.kind == "cifar10":
            if not self.train_paths or not self.test_paths:
                raise ConfigError("dataset.kind=cifar10 needs "
                                  "dataset.train_paths and dataset.test_paths")
        else:
            if self.per_class < 1 or self.holdout_per_class < 1:
                raise ConfigError("dataset.per_class and "
                                  "dataset.holdout_per_class must be positive")
            if self.num_classes < 2:
                raise ConfigError("dataset.num_classes must be at least 2")


@dataclass(frozen=True)
class AnalysisConfig:
    probe_per_class: int = 5
    probe_batches: int = 4
    captures: tuple[str, ...] = ()               # empty tuple means "all"
    snapshot_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if self.probe_per_class < 1 or self.probe_batches < 1:
            raise ConfigError("analysis.probe_per_class and "
                              "analysis.probe_batches must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    partition: PartitionSpec
    model: ModelSpec
    fl: FLConfig
    optimizer: OptimizerConfig
    analysis: AnalysisConfig
    output_dir: str = "run"
    seed: int = 0


DEFAULT_SNAPSHOT_EPOCHS = (20, 40, 80)


# ---- value converters ----------------------------------------------------


def _fail(key, value, want):
    raise ConfigError(f"key '{key}': cannot read '{value}' as {want}")


def _int(key, v):
    try:
        return int(v)
    except ValueError:
        _fail(key, v, "an integer")


def _float(key, v):
    try:
        return float(v)
    except ValueError:
        _fail(key, v, "a number")


def _str(key, v):
    return v


def _paths(key, v):
    items = tuple(p.strip() for p in v.split(",") if p.strip())
    if not items:
        _fail(key, v, "a comma-separated path list")
    return items


def _ints(key, v):
    if v == "none":
        return ()
    try:
        return tuple(int(p) for p in v.split(","))
    except ValueError:
        _fail(key, v, "a comma-separated integer list")


def _names(key, v):
    if v == "all":
        return ()
    items = tuple(p.strip() for p in v.split(",") if p.strip())
    if not items:
        _fail(key, v, "'all' or a comma-separated name list")
    return items


def _shape(key, v):
    parts = v.split("x")
    if len(parts) != 3:
        _fail(key, v, "a CxHxW shape like 3x32x32")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        _fail(key, v, "a CxHxW shape like 3x32x32")


def _enum(enum_cls):
    def conv(key, v):
        try:
            return enum_cls[v]
        except KeyError:
            names = ", ".join(m.name for m in enum_cls)
            _fail(key, v, f"one of {names}")
    return conv


def _scheme(key, v):
    try:
        return Scheme(v)
    except ValueError:
        _fail(key, v, "S1 or S2")


_CONVERTERS = {
    "seed": _int,
    "output_dir": _str,
    "dataset.kind": _str,
    "dataset.per_class": _int,
    "dataset.holdout_per_class": _int,
    "dataset.num_classes": _int,
    "dataset.image_shape": _shape,
    "dataset.noise_std": _float,
    "dataset.train_paths": _paths,
    "dataset.test_paths": _paths,
    "partition.scheme": _scheme,
    "partition.num_clients": _int,
    "partition.labels_per_client": _int,
    "partition.per_client_volume": _int,
    "partition.seed": _int,
    "model.arch": _enum(Arch),
    "model.dtype": _str,
    "model.hidden_dims": _ints,
    "model.num_stages": _int,
    "model.base_channels": _int,
    "model.patch_size": _int,
    "model.embed_dim": _int,
    "model.num_heads": _int,
    "model.num_blocks": _int,
    "model.mlp_ratio": _int,
    "model.projection_dim": _int,
    "fl.strategy": _enum(Strategy),
    "fl.rounds": _int,
    "fl.client_epochs": _int,
    "fl.batch_size": _int,
    "fl.client_eval": _enum(ClientEval),
    "moon.temperature": _float,
    "moon.mu": _float,
    "ala.sample_percent": _float,
    "ala.start_layer": _int,
    "ala.std_threshold": _float,
    "ala.learning_rate": _float,
    "ala.max_steps": _int,
    "optimizer.kind": _enum(OptimizerKind),
    "optimizer.learning_rate": _float,
    "optimizer.weight_decay": _float,
    "optimizer.momentum": _float,
    "optimizer.beta2": _float,
    "optimizer.epsilon": _float,
    "analysis.probe_per_class": _int,
    "analysis.probe_batches": _int,
    "analysis.captures": _names,
    "analysis.snapshot_epochs": _ints,
}

_CIFAR_ONLY = {"dataset.train_paths", "dataset.test_paths"}
_SYNTHETIC_ONLY = {"dataset.per_class", "dataset.holdout_per_class",
                   "dataset.num_classes", "dataset.image_shape",
                   "dataset.noise_std"}


def _read_lines(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got '{stripped}'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONVERTERS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def parse_config_text(text: str) -> ExperimentConfig:
    raw = _read_lines(text)
    kv = {k: _CONVERTERS[k](k, v) for k, v in raw.items()}

    def take(key, default):
        return kv.get(key, default)

    seed = take("seed", 0)
    output_dir = take("output_dir", "run")

    kind = take("dataset.kind", "synthetic")
    wrong = (_CIFAR_ONLY if kind == "synthetic" else _SYNTHETIC_ONLY) & set(kv)
    if wrong:
        raise ConfigError(f"key '{sorted(wrong)[0]}' does not apply to "
                          f"dataset.kind={kind}")
    if kind == "cifar10":
        dataset = DatasetConfig(kind="cifar10",
                                train_paths=take("dataset.train_paths", ()),
                                test_paths=take("dataset.test_paths", ()))
    else:
        dataset = DatasetConfig(
            kind=kind,
            per_class=take("dataset.per_class", 100),
            holdout_per_class=take("dataset.holdout_per_class", 20),
            num_classes=take("dataset.num_classes", 10),
            image_shape=take("dataset.image_shape", (3, 32, 32)),
            noise_std=take("dataset.noise_std", 0.08))

    if "partition.num_clients" not in kv:
        raise ConfigError("missing required key 'partition.num_clients'")
    try:
        part = PartitionSpec(
            scheme=take("partition.scheme", Scheme.DISJOINT_EQUAL),
            num_clients=kv["partition.num_clients"],
            labels_per_client=take("partition.labels_per_client", 4),
            per_client_volume=take("partition.per_client_volume", 0),
            seed=take("partition.seed", seed))
    except ValueError as err:
        raise ConfigError(f"partition: {err}") from err

    arch = take("model.arch", Arch.TINY_MLP)
    num_classes = 10 if kind == "cifar10" else dataset.num_classes
    image_shape = (3, 32, 32) if kind == "cifar10" else dataset.image_shape
    try:
        model = ModelSpec(
            arch=arch,
            input_shape=image_shape,
            num_classes=num_classes,
            dtype=take("model.dtype", "float32"),
            hidden_dims=take("model.hidden_dims", (256, 128)),
            num_stages=take("model.num_stages", 3),
            base_channels=take("model.base_channels", 22),
            patch_size=take("model.patch_size", 4),
            embed_dim=take("model.embed_dim", 64),
            num_heads=take("model.num_heads", 4),
            num_blocks=take("model.num_blocks", 4),
            mlp_ratio=take("model.mlp_ratio", 4),
            projection_dim=take("model.projection_dim", 64))
    except ValueError as err:
        raise ConfigError(f"model: {err}") from err

    strategy = take("fl.strategy", Strategy.FEDAVG)
    for prefix, wanted in (("moon.", Strategy.MOON), ("ala.", Strategy.FEDALA)):
        stray = [k for k in kv if k.startswith(prefix)]
        if stray and strategy is not wanted:
            raise ConfigError(f"key '{stray[0]}' requires "
                              f"fl.strategy={wanted.name}")
    try:
        moon = MoonConfig(temperature=take("moon.temperature", 0.5),
                          mu=take("moon.mu", 5.0))
        ala = AlaConfig(sample_percent=take("ala.sample_percent", 100.0),
                        start_layer=take("ala.start_layer", 1),
                        std_threshold=take("ala.std_threshold", 0.05),
                        learning_rate=take("ala.learning_rate", 1.0),
                        max_steps=take("ala.max_steps", 50))
        fl = FLConfig(strategy=strategy,
                      rounds=take("fl.rounds", 100),
                      client_epochs=take("fl.client_epochs", 1),
                      batch_size=take("fl.batch_size", 32),
                      seed=seed,
                      client_eval=take("fl.client_eval", ClientEval.SHARD),
                      moon=moon, ala=ala)
    except ValueError as err:
        raise ConfigError(f"fl: {err}") from err

    base_opt = default_optimizer_for(arch)
    try:
        optimizer = OptimizerConfig(
            kind=take("optimizer.kind", base_opt.kind),
            learning_rate=take("optimizer.learning_rate",
                               base_opt.learning_rate),
            weight_decay=take("optimizer.weight_decay",
                              base_opt.weight_decay),
            momentum_or_beta1=take("optimizer.momentum",
                                   base_opt.momentum_or_beta1),
            beta2=take("optimizer.beta2", base_opt.beta2),
            epsilon=take("optimizer.epsilon", base_opt.epsilon))
    except ValueError as err:
        raise ConfigError(f"optimizer: {err}") from err

    default_snaps = tuple(e for e in DEFAULT_SNAPSHOT_EPOCHS if e <= fl.rounds)
    snaps = take("analysis.snapshot_epochs", default_snaps)
    snaps = tuple(sorted(set(snaps)))
    bad = [e for e in snaps if not 1 <= e <= fl.rounds]
    if bad:
        raise ConfigError(f"key 'analysis.snapshot_epochs': epoch {bad[0]} "
                          f"outside [1, {fl.rounds}]")
    analysis = AnalysisConfig(
        probe_per_class=take("analysis.probe_per_class", 5),
        probe_batches=take("analysis.probe_batches", 4),
        captures=take("analysis.captures", ()),
        snapshot_epochs=snaps)

    return ExperimentConfig(dataset=dataset, partition=part, model=model,
                            fl=fl, optimizer=optimizer, analysis=analysis,
                            output_dir=output_dir, seed=seed)


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


# ---- canonical serialization ----------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, int)) and not isinstance(value, bool):
        return repr(float(value))
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value) if value else "none"
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every key explicit, fixed order, round-trips exactly."""
    ds, part, model, fl, opt, an = (cfg.dataset, cfg.partition, cfg.model,
                                    cfg.fl, cfg.optimizer, cfg.analysis)
    pairs: list[tuple[str, str]] = [
        ("seed", str(cfg.seed)),
        ("output_dir", cfg.output_dir),
        ("dataset.kind", ds.kind),
    ]
    if ds.kind == "cifar10":
        pairs += [("dataset.train_paths", ",".join(ds.train_paths)),
                  ("dataset.test_paths", ",".join(ds.test_paths))]
    else:
        pairs += [("dataset.per_class", str(ds.per_class)),
                  ("dataset.holdout_per_class", str(ds.holdout_per_class)),
                  ("dataset.num_classes", str(ds.num_classes)),
                  ("dataset.image_shape", "x".join(str(v) for v in ds.image_shape)),
                  ("dataset.noise_std", _fmt(ds.noise_std))]
    pairs += [
        ("partition.scheme", part.scheme.value),
        ("partition.num_clients", str(part.num_clients)),
        ("partition.labels_per_client", str(part.labels_per_client)),
        ("partition.per_client_volume", str(part.per_client_volume)),
        ("partition.seed", str(part.seed)),
        ("model.arch", model.arch.name),
        ("model.dtype", model.dtype),
        ("model.hidden_dims", _fmt(model.hidden_dims)),
        ("model.num_stages", str(model.num_stages)),
        ("model.base_channels", str(model.base_channels)),
        ("model.patch_size", str(model.patch_size)),
        ("model.embed_dim", str(model.embed_dim)),
        ("model.num_heads", str(model.num_heads)),
        ("model.num_blocks", str(model.num_blocks)),
        ("model.mlp_ratio", str(model.mlp_ratio)),
        ("model.projection_dim", str(model.projection_dim)),
        ("fl.strategy", fl.strategy.name),
        ("fl.rounds", str(fl.rounds)),
        ("fl.client_epochs", str(fl.client_epochs)),
        ("fl.batch_size", str(fl.batch_size)),
        ("fl.client_eval", fl.client_eval.name),
    ]
    if fl.strategy is Strategy.MOON:
        pairs += [("moon.temperature", _fmt(fl.moon.temperature)),
                  ("moon.mu", _fmt(fl.moon.mu))]
    if fl.strategy is Strategy.FEDALA:
        pairs += [("ala.sample_percent", _fmt(fl.ala.sample_percent)),
                  ("ala.start_layer", str(fl.ala.start_layer)),
                  ("ala.std_threshold", _fmt(fl.ala.std_threshold)),
                  ("ala.learning_rate", _fmt(fl.ala.learning_rate)),
                  ("ala.max_steps", str(fl.ala.max_steps))]
    pairs += [
        ("optimizer.kind", opt.kind.name),
        ("optimizer.learning_rate", _fmt(opt.learning_rate)),
        ("optimizer.weight_decay", _fmt(opt.weight_decay)),
        ("optimizer.momentum", _fmt(opt.momentum_or_beta1)),
        ("optimizer.beta2", _fmt(opt.beta2)),
        ("optimizer.epsilon", _fmt(opt.epsilon)),
        ("analysis.probe_per_class", str(an.probe_per_class)),
        ("analysis.probe_batches", str(an.probe_batches)),
        ("analysis.captures", _fmt(an.captures) if an.captures else "all"),
        ("analysis.snapshot_epochs", _fmt(an.snapshot_epochs)),
    ]
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()
