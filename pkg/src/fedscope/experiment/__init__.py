"""Declarative experiment configs, run orchestration, analysis, and export."""

from .config import (
    AnalysisConfig,
    ConfigError,
    DatasetConfig,
    ExperimentConfig,
    config_hash,
    parse_config,
    parse_config_text,
    serialize_config,
)
from .manifest import RunManifest, load_manifest, sha256_file, write_manifest

__all__ = [
    "AnalysisConfig",
    "ConfigError",
    "DatasetConfig",
    "ExperimentConfig",
    "RunManifest",
    "config_hash",
    "load_manifest",
    "parse_config",
    "parse_config_text",
    "serialize_config",
    "sha256_file",
    "write_manifest",
]
