"""Drive a configured federated run into an output directory."""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path

from ..checkpoint import load_arrays, save_arrays
from ..data import LabeledDataset, generate_synthetic, load_cifar10
from ..fl import FederatedEngine, RoundReport
from ..partition import partition
from .config import ExperimentConfig, config_hash, serialize_config
from .manifest import (
    MANIFEST_NAME,
    ManifestError,
    RunManifest,
    load_manifest,
    refresh_hashes,
    write_manifest,
)

log = logging.getLogger("fedscope.run")

METRICS_FILE = "metrics.csv"
TIMINGS_FILE = "timings.csv"
LATEST_STATE = "state_latest.bin"
ENV_OUTPUT_ROOT = "FEDSCOPE_OUTPUT_ROOT"


class RunnerError(RuntimeError):
    pass


def snapshot_name(epoch: int) -> str:
    return f"state_epoch{epoch:04d}.bin"


def resolve_output_dir(output_dir: str) -> Path:
    """Relative dirs land under $FEDSCOPE_OUTPUT_ROOT when it is set."""
    path = Path(output_dir)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def build_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    ds = cfg.dataset
    if ds.kind == "cifar10":
        return load_cifar10(list(ds.train_paths)), load_cifar10(list(ds.test_paths))
    train = generate_synthetic(seed=cfg.seed, per_class=ds.per_class,
                               num_classes=ds.num_classes,
                               image_shape=ds.image_shape,
                               noise_std=ds.noise_std, tag="train")
    holdout = generate_synthetic(seed=cfg.seed, per_class=ds.holdout_per_class,
                                 num_classes=ds.num_classes,
                                 image_shape=ds.image_shape,
                                 noise_std=ds.noise_std, tag="holdout")
    return train, holdout


def build_engine(cfg: ExperimentConfig,
                 train: LabeledDataset,
                 holdout: LabeledDataset) -> FederatedEngine:
    shards = partition(train, cfg.partition)
    return FederatedEngine(cfg.model, train, holdout, shards, cfg.fl,
                           cfg.optimizer)


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def metrics_rows(report: RoundReport) -> list[str]:
    rows = [f"{report.round_index},{st.client_id},{_num(st.loss)},"
            f"{_num(st.accuracy)},{st.samples}"
            for st in report.per_client]
    total = sum(st.samples for st in report.per_client)
    rows.append(f"{report.round_index},SERVER,nan,"
                f"{_num(report.server_accuracy)},{total}")
    return rows


def timings_rows(report: RoundReport) -> list[str]:
    rows = [f"{report.round_index},{st.client_id},{_num(st.epoch_wall_ms)}"
            for st in report.per_client]
    rows.append(f"{report.round_index},SERVER,{_num(report.wall_ms)}")
    return rows


def _append_lines(path: Path, lines: list[str]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))


def _truncate_csv(path: Path, header: str, completed_rounds: int) -> None:
    """Drop rows from rounds that were in flight when a run was interrupted."""
    if not path.exists():
        path.write_text(header + "\n", encoding="utf-8")
        return
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != header:
        raise RunnerError(f"{path.name} header does not match the schema")
    def keep(line: str) -> bool:
        head = line.split(",", 1)[0]
        return head.isdigit() and int(head) < completed_rounds

    kept = [line for line in lines[1:] if keep(line)]
    path.write_text("".join(line + "\n" for line in [header] + kept),
                    encoding="utf-8")


def cmd_run(cfg: ExperimentConfig) -> Path:
    """Run (or resume) the experiment; returns the populated output dir."""
    out = resolve_output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)

    if (out / MANIFEST_NAME).exists():
        manifest = load_manifest(out)
        if manifest.config_hash != digest:
            raise RunnerError(f"{out} already holds a run with a different "
                              f"config (hash {manifest.config_hash[:12]}…)")
        if manifest.status == "complete":
            log.info("run already complete in %s", out)
            return out
    else:
        manifest = RunManifest(config_text=serialize_config(cfg),
                               config_hash=digest,
                               total_rounds=cfg.fl.rounds)
        write_manifest(out, manifest)

    train, holdout = build_datasets(cfg)
    engine = build_engine(cfg, train, holdout)

    start = manifest.completed_rounds
    if start > 0:
        arrays = load_arrays(out / LATEST_STATE)
        engine.load_state_arrays(arrays, start)
        log.info("resuming %s at round %d/%d", out, start, cfg.fl.rounds)
    _truncate_csv(out / METRICS_FILE, manifest.metrics_schema, start)
    _truncate_csv(out / TIMINGS_FILE, manifest.timings_schema, start)
    manifest.files.setdefault(METRICS_FILE, "")
    manifest.files.setdefault(TIMINGS_FILE, "")

    snapshots = set(cfg.analysis.snapshot_epochs)

    def on_round(eng: FederatedEngine, report: RoundReport) -> None:
        done = report.round_index + 1
        _append_lines(out / METRICS_FILE, metrics_rows(report))
        _append_lines(out / TIMINGS_FILE, timings_rows(report))
        save_arrays(out / LATEST_STATE, eng.state_arrays())
        manifest.files.setdefault(LATEST_STATE, "")
        if done in snapshots:
            save_arrays(out / snapshot_name(done), eng.state_arrays())
            manifest.files.setdefault(snapshot_name(done), "")
        manifest.completed_rounds = done
        refresh_hashes(out, manifest)
        write_manifest(out, manifest)
        log.info("round %d/%d server_accuracy=%.4f", done, cfg.fl.rounds,
                 report.server_accuracy)

    manifest.status = "running"
    try:
        engine.run(cfg.fl.rounds, start_round=start, on_round=on_round)
    except (RuntimeError, ManifestError) as err:
        manifest.status = "aborted"
        manifest.notes.append(f"aborted at round {manifest.completed_rounds}: "
                              f"{err}")
        write_manifest(out, manifest)
        raise RunnerError(str(err)) from err

    manifest.status = "complete"
    refresh_hashes(out, manifest)
    write_manifest(out, manifest)
    return out
