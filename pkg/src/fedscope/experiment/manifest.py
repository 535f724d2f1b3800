"""Run manifest: config echo, round progress, and artifact hashes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.json"
METRICS_SCHEMA = "round,client_id,loss,accuracy,samples"
TIMINGS_SCHEMA = "round,client_id,wall_ms"
FORMAT_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    config_text: str
    config_hash: str
    total_rounds: int
    completed_rounds: int = 0
    status: str = "running"          # running | complete | aborted
    metrics_schema: str = METRICS_SCHEMA
    timings_schema: str = TIMINGS_SCHEMA
    format_version: int = FORMAT_VERSION
    files: dict[str, str] = field(default_factory=dict)   # relpath -> sha256
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ManifestError(f"manifest is not valid JSON: {err}") from err
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ManifestError(f"manifest has unknown fields: {sorted(unknown)}")
        missing = {"config_text", "config_hash", "total_rounds"} - set(data)
        if missing:
            raise ManifestError(f"manifest missing fields: {sorted(missing)}")
        m = cls(**data)
        if m.format_version != FORMAT_VERSION:
            raise ManifestError(f"unsupported manifest version "
                                f"{m.format_version}")
        return m


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir, manifest: RunManifest) -> Path:
    run_dir = Path(run_dir)
    fd, tmp = tempfile.mkstemp(dir=run_dir, prefix=".manifest-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(manifest.to_json())
        os.replace(tmp, run_dir / MANIFEST_NAME)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return run_dir / MANIFEST_NAME


def load_manifest(run_dir) -> RunManifest:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} in {run_dir}")
    return RunManifest.from_json(path.read_text(encoding="utf-8"))


def refresh_hashes(run_dir, manifest: RunManifest) -> None:
    """Re-hash every tracked artifact that exists on disk."""
    run_dir = Path(run_dir)
    for rel in list(manifest.files):
        path = run_dir / rel
        if not path.exists():
            raise ManifestError(f"tracked file vanished: {rel}")
        manifest.files[rel] = sha256_file(path)


def check_files(run_dir, manifest: RunManifest) -> list[str]:
    """Return problems (missing files, hash mismatches); empty means clean."""
    run_dir = Path(run_dir)
    problems = []
    for rel, digest in sorted(manifest.files.items()):
        path = run_dir / rel
        if not path.exists():
            problems.append(f"missing: {rel}")
        elif sha256_file(path) != digest:
            problems.append(f"hash mismatch: {rel}")
    return problems
