"""Datasets: columnar container, CIFAR-10 binary parsing, synthetic images.

Images live as float32 in [0, 1], shaped (n, channels, height, width);
labels as int64.  The CIFAR-10 binary layout is 3073-byte records: one
label byte then 3072 pixel bytes (red, green, blue planes, each a
row-major 32x32 grid).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .rngs import child_rng

CIFAR_RECORD_BYTES = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10

SYNTHETIC_MAGIC = b"FSYD"
SYNTHETIC_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class LabeledDataset:
    """Images plus integer labels, column-wise."""

    features: np.ndarray     # (n, c, h, w) float32 in [0, 1]
    labels: np.ndarray       # (n,) int64
    num_classes: int
    provenance: str

    def __post_init__(self):
        f, y = self.features, self.labels
        if f.ndim != 4 or f.dtype != np.float32:
            raise ValueError("features must be (n, c, h, w) float32")
        if y.shape != (f.shape[0],) or y.dtype != np.int64:
            raise ValueError("labels must be int64 with one entry per image")
        if f.size and (f.min() < 0.0 or f.max() > 1.0):
            raise ValueError("features must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.features.shape[1:]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray, tag: str = "subset") -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self)):
            raise IndexError("subset index out of range")
        return LabeledDataset(self.features[idx], self.labels[idx],
                              self.num_classes, f"{self.provenance}/{tag}")


def load_cifar10(paths: list[str] | str) -> LabeledDataset:
    """Parse one or more CIFAR-10 binary batch files."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    if not paths:
        raise DatasetFormatError("no dataset files given")
    feats, labs = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0:
            raise DatasetFormatError(f"{path}: empty file")
        if raw.size % CIFAR_RECORD_BYTES:
            raise DatasetFormatError(
                f"{path}: size {raw.size} is not a whole number of "
                f"{CIFAR_RECORD_BYTES}-byte records")
        recs = raw.reshape(-1, CIFAR_RECORD_BYTES)
        labels = recs[:, 0].astype(np.int64)
        if labels.max() >= CIFAR_CLASSES:
            raise DatasetFormatError(
                f"{path}: label {labels.max()} out of range 0..9")
        pixels = recs[:, 1:].reshape(-1, *CIFAR_SHAPE)
        feats.append((pixels.astype(np.float32) / 255.0))
        labs.append(labels)
    return LabeledDataset(np.concatenate(feats), np.concatenate(labs),
                          CIFAR_CLASSES, f"cifar10:{len(paths)} file(s)")


def write_cifar10(path: str, ds: LabeledDataset) -> None:
    """Write a dataset back to the CIFAR-10 binary layout (8-bit quantized)."""
    if ds.image_shape != CIFAR_SHAPE:
        raise ValueError(f"CIFAR layout needs {CIFAR_SHAPE} images")
    n = len(ds)
    out = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = ds.labels
    out[:, 1:] = np.round(ds.features.reshape(n, -1) * 255.0).astype(np.uint8)
    out.tofile(path)


def generate_synthetic(seed: int, per_class: int, num_classes: int = 10,
                       image_shape: tuple[int, int, int] = (3, 32, 32),
                       noise_std: float = 0.08, tag: str = "train"
                       ) -> LabeledDataset:
    """Class-conditional blobby images: per-class smooth mean plus noise.

    Samples come out class-major (all of class 0 first).  The class means
    depend only on (seed, class); the per-sample noise also folds in `tag`
    so train/holdout draws differ.
    """
    c, h, w = image_shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    feats = np.empty((num_classes * per_class, c, h, w), dtype=np.float32)
    for cls in range(num_classes):
        mean_rng = child_rng(seed, "synthetic-mean", cls)
        img = np.full((c, h, w), 0.5)
        for _ in range(3):
            cy, cx = mean_rng.uniform(0, h), mean_rng.uniform(0, w)
            sigma = mean_rng.uniform(0.12, 0.3) * min(h, w)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            amps = mean_rng.uniform(-0.35, 0.35, size=c)
            img += amps[:, None, None] * blob
        noise_rng = child_rng(seed, "synthetic-noise", cls, _tag_code(tag))
        block = img[None] + noise_rng.standard_normal((per_class, c, h, w)) * noise_std
        feats[cls * per_class:(cls + 1) * per_class] = np.clip(block, 0.0, 1.0)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return LabeledDataset(feats, labels, num_classes,
                          f"synthetic:seed={seed}:{tag}")


def write_synthetic(path: str, ds: LabeledDataset) -> None:
    """Dump a freshly generated synthetic dataset to a binary file.

    Layout (integers little-endian): magic b"FSYD", u32 version,
    u32 num_classes, u32 per_class, i64 seed, u32 channels, u32 height,
    u32 width, u16 tag length + utf-8 tag, then the class-major float32
    feature block, raw little-endian.  Labels are implied by the
    class-major order.
    """
    prov = ds.provenance.split(":")
    if len(prov) != 3 or prov[0] != "synthetic" or not prov[1].startswith("seed="):
        raise ValueError("dump expects a dataset straight from "
                         f"generate_synthetic, got provenance {ds.provenance!r}")
    seed, tag = int(prov[1][5:]), prov[2]
    per_class, rem = divmod(len(ds), ds.num_classes)
    expected = np.repeat(np.arange(ds.num_classes, dtype=np.int64), per_class)
    if rem or not np.array_equal(ds.labels, expected):
        raise ValueError("dump expects class-major labels with equal counts")
    tag_bytes = tag.encode()
    header = SYNTHETIC_MAGIC + struct.pack(
        "<IIIqIIIH", SYNTHETIC_VERSION, ds.num_classes, per_class, seed,
        *ds.image_shape, len(tag_bytes)) + tag_bytes
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())


def load_synthetic(path: str) -> LabeledDataset:
    """Reload a dataset written by :func:`write_synthetic`, bit-exact."""
    with open(path, "rb") as fh:
        raw = fh.read()
    fixed = len(SYNTHETIC_MAGIC) + struct.calcsize("<IIIqIIIH")
    if len(raw) < fixed or raw[:4] != SYNTHETIC_MAGIC:
        raise DatasetFormatError(f"{path}: not a synthetic dataset dump")
    version, num_classes, per_class, seed, c, h, w, tag_len = struct.unpack(
        "<IIIqIIIH", raw[4:fixed])
    if version != SYNTHETIC_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    tag = raw[fixed:fixed + tag_len].decode()
    body = raw[fixed + tag_len:]
    n = num_classes * per_class
    if len(body) != n * c * h * w * 4:
        raise DatasetFormatError(
            f"{path}: feature block is {len(body)} bytes, expected "
            f"{n * c * h * w * 4}")
    feats = np.frombuffer(body, dtype="<f4").reshape(n, c, h, w).copy()
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    try:
        return LabeledDataset(feats, labels, num_classes,
                              f"synthetic:seed={seed}:{tag}")
    except ValueError as err:
        raise DatasetFormatError(f"{path}: {err}") from err


def _tag_code(tag: str) -> int:
    code = 2166136261
    for b in tag.encode():
        code = ((code ^ b) * 16777619) & 0xFFFFFFFF
    return code


def stratified_split(ds: LabeledDataset, holdout_per_class: int, seed: int
                     ) -> tuple[LabeledDataset, LabeledDataset]:
    """Split off `holdout_per_class` examples of every class, seeded."""
    rng = child_rng(seed, "holdout-split")
    hold_idx = []
    for cls in range(ds.num_classes):
        pool = np.flatnonzero(ds.labels == cls)
        if pool.size < holdout_per_class:
            raise ValueError(f"class {cls} has only {pool.size} examples, "
                             f"need {holdout_per_class} for the holdout")
        hold_idx.append(rng.choice(pool, size=holdout_per_class, replace=False))
    hold_idx = np.sort(np.concatenate(hold_idx))
    mask = np.ones(len(ds), dtype=bool)
    mask[hold_idx] = False
    train_idx = np.flatnonzero(mask)
    return ds.subset(train_idx, "train"), ds.subset(hold_idx, "holdout")
