"""Representation-similarity reports over saved run checkpoints."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from ..checkpoint import load_arrays
from ..cka import (
    CkaMatrix,
    build_probe_minibatches,
    cross_model_similarity,
    overall_similarity,
    same_layer_similarity,
)
from ..models import Model, build_model
from .config import ExperimentConfig, parse_config_text
from .manifest import load_manifest, refresh_hashes, write_manifest
from .runner import build_datasets, snapshot_name

log = logging.getLogger("fedscope.analyze")


class AnalyzeError(RuntimeError):
    pass


def _bucket(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in arrays.items()
            if k.startswith(prefix)}


def _select(matrix: CkaMatrix, names: tuple[str, ...],
            rows: bool, cols: bool) -> CkaMatrix:
    if not names:
        return matrix
    ri = [matrix.row_names.index(n) for n in names if n in matrix.row_names] \
        if rows else list(range(len(matrix.row_names)))
    ci = [matrix.col_names.index(n) for n in names if n in matrix.col_names] \
        if cols else list(range(len(matrix.col_names)))
    if rows and not ri or cols and not ci:
        raise AnalyzeError(f"capture selection {names} matches nothing")
    return CkaMatrix(tuple(matrix.row_names[i] for i in ri),
                     tuple(matrix.col_names[j] for j in ci),
                     matrix.values[np.ix_(ri, ci)])


def _write_matrix(out: Path, stem: str, matrix: CkaMatrix,
                  produced: list[str]) -> None:
    (out / f"{stem}.csv").write_text(matrix.to_csv(), encoding="utf-8")
    (out / f"{stem}.pgm").write_bytes(matrix.to_pgm())
    produced += [f"{stem}.csv", f"{stem}.pgm"]


def same_layer_matrix(clients: list[tuple[int, Model]], server: Model,
                      holdout, batches, captures: tuple[str, ...]) -> CkaMatrix:
    """Rows = clients, columns = capture points, values = CKA vs the server."""
    rows, values = [], []
    for cid, model in clients:
        sims = same_layer_similarity(model, server, holdout, batches)
        names = [n for n in sims if not captures or n in captures]
        if not names:
            raise AnalyzeError(f"capture selection {captures} matches nothing")
        rows.append(f"client{cid}")
        values.append([sims[n] for n in names])
    return CkaMatrix(tuple(rows), tuple(names), np.asarray(values))


def cmd_analyze(run_dir, epochs: tuple[int, ...] = (),
                clients: tuple[int, ...] = (),
                overall_capture: str | None = None) -> list[Path]:
    """Emit per-snapshot similarity CSVs and heatmaps; returns written files."""
    out = Path(run_dir)
    manifest = load_manifest(out)
    cfg: ExperimentConfig = parse_config_text(manifest.config_text)
    epochs = tuple(epochs) or cfg.analysis.snapshot_epochs
    if not epochs:
        raise AnalyzeError("no snapshot epochs requested and the config "
                           "defines none")
    for e in epochs:
        if not (out / snapshot_name(e)).exists():
            raise AnalyzeError(f"missing checkpoint for snapshot epoch {e} "
                               f"(expected {snapshot_name(e)})")

    all_ids = tuple(range(cfg.partition.num_clients))
    ids = tuple(clients) or all_ids
    bad = [c for c in ids if c not in all_ids]
    if bad:
        raise AnalyzeError(f"client {bad[0]} not in this run (have "
                           f"{cfg.partition.num_clients} clients)")

    _, holdout = build_datasets(cfg)
    batches = build_probe_minibatches(holdout, seed=cfg.seed,
                                      per_class=cfg.analysis.probe_per_class,
                                      num_batches=cfg.analysis.probe_batches)
    server = build_model(cfg.model, cfg.fl.seed)
    pool = [build_model(cfg.model, cfg.fl.seed) for _ in ids]
    for m in (server, *pool):
        m.set_trainable_grad(False)
    points = [cp.name for cp in server.capture_points]
    if overall_capture is not None and overall_capture not in points:
        raise AnalyzeError(f"unknown capture point {overall_capture!r}; "
                           f"choose from {points}")

    produced: list[str] = []
    for e in epochs:
        arrays = load_arrays(out / snapshot_name(e))
        server.set_params(_bucket(arrays, "server/"))
        for cid, model in zip(ids, pool):
            params = _bucket(arrays, f"client{cid}/local/")
            if not params:
                raise AnalyzeError(f"snapshot epoch {e} has no state for "
                                   f"client {cid}")
            model.set_params(params)

        same = same_layer_matrix(list(zip(ids, pool)), server, holdout,
                                 batches, cfg.analysis.captures)
        _write_matrix(out, f"same_layer_epoch{e:04d}", same, produced)

        for cid, model in zip(ids, pool):
            cross = cross_model_similarity(model, server, holdout, batches)
            cross = _select(cross, cfg.analysis.captures, rows=True, cols=True)
            _write_matrix(out, f"cross_model_client{cid:03d}_epoch{e:04d}",
                          cross, produced)

        everyone = [*pool, server]
        labels = tuple(f"client{cid}" for cid in ids) + ("server",)
        overall = overall_similarity(everyone, everyone, holdout, batches,
                                     capture=overall_capture,
                                     row_names=labels, col_names=labels)
        _write_matrix(out, f"overall_epoch{e:04d}", overall, produced)
        log.info("analyzed snapshot epoch %d (%d clients)", e, len(ids))

    for rel in produced:
        manifest.files.setdefault(rel, "")
    refresh_hashes(out, manifest)
    write_manifest(out, manifest)
    return [out / rel for rel in produced]
