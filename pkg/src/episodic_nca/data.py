"""Synthetic few-shot benchmark and the binary dataset file format.

File layout (little-endian)::

    magic      8 bytes   b"EPNCADS\\0"
    version    uint32
    N, d, C    uint64 x 3   rows, feature dim, number of classes
    splits     C x uint8    split code per class (0 train, 1 val, 2 test)
    features   N*d float64  row-major
    labels     N   int64    global class ids in [0, C)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RngStream
from .sampler import SPLITS, LabeledDataset

MAGIC = b"EPNCADS\0"
VERSION = 1
_HEADER = struct.Struct("<8sIQQQ")


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian classes living in a hidden low-dimensional subspace.

    Class centres are drawn in ``informative_dim`` dimensions; samples add
    isotropic noise there plus ``nuisance_ratio`` times stronger noise in the
    remaining dimensions, and the result is rotated by a random orthogonal
    matrix shared by all splits. A useful embedding therefore has to discover
    the informative subspace, and what it learns transfers to unseen classes.
    """

    train_classes: int = 64
    val_classes: int = 16
    test_classes: int = 20
    samples_per_class: int = 50
    dim: int = 16
    center_scale: float = 1.0
    within_std: float = 0.6
    informative_dim: int = 8
    nuisance_ratio: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if min(self.train_classes, self.val_classes, self.test_classes) < 0:
            raise ValueError("class counts must be non-negative")
        if self.train_classes + self.val_classes + self.test_classes < 1:
            raise ValueError("need at least one class")
        if self.samples_per_class < 1 or self.dim < 1:
            raise ValueError("samples_per_class and dim must be positive")
        if not 1 <= self.informative_dim <= self.dim:
            raise ValueError("informative_dim must lie in [1, dim]")
        if self.within_std < 0 or self.center_scale < 0 or self.nuisance_ratio < 0:
            raise ValueError("scales must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.train_classes + self.val_classes + self.test_classes


@dataclass
class DatasetFile:
    """All rows of a dataset with global labels and a per-class split table."""

    features: np.ndarray
    labels: np.ndarray
    class_split: np.ndarray

    def split(self, name: str) -> LabeledDataset:
        code = SPLITS.index(name)
        classes = np.flatnonzero(self.class_split == code)
        if classes.size == 0:
            raise ValueError(f"dataset has no {name} classes")
        rows = np.isin(self.labels, classes)
        remap = np.full(self.class_split.size, -1, dtype=np.int64)
        remap[classes] = np.arange(classes.size)
        return LabeledDataset(self.features[rows], remap[self.labels[rows]], name, classes.tolist())

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def generate_synthetic(spec: SyntheticSpec) -> DatasetFile:
    stream = RngStream(spec.seed)
    gen = stream.child("geometry").gen
    rotation, _ = np.linalg.qr(gen.standard_normal((spec.dim, spec.dim)))
    k, C, per = spec.informative_dim, spec.num_classes, spec.samples_per_class
    centres = spec.center_scale * stream.child("centres").gen.standard_normal((C, k))
    noise_gen = stream.child("samples").gen
    latent = np.zeros((C * per, spec.dim))
    labels = np.repeat(np.arange(C), per)
    latent[:, :k] = centres[labels] + spec.within_std * noise_gen.standard_normal((C * per, k))
    if spec.dim > k:
        latent[:, k:] = spec.within_std * spec.nuisance_ratio * noise_gen.standard_normal(
            (C * per, spec.dim - k)
        )
    features = latent @ rotation.T
    split = np.repeat(
        np.arange(3, dtype=np.uint8), [spec.train_classes, spec.val_classes, spec.test_classes]
    )
    return DatasetFile(features, labels.astype(np.int64), split)


def write_dataset(path, data: DatasetFile) -> None:
    feats = np.ascontiguousarray(data.features, dtype="<f8")
    labels = np.ascontiguousarray(data.labels, dtype="<i8")
    split = np.ascontiguousarray(data.class_split, dtype=np.uint8)
    n, d = feats.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, d, split.size))
        f.write(split.tobytes())
        f.write(feats.tobytes())
        f.write(labels.tobytes())


def read_dataset(path) -> DatasetFile:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, d, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    expected = _HEADER.size + c + 8 * n * d + 8 * n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    split = np.frombuffer(raw, dtype=np.uint8, count=c, offset=off).copy()
    off += c
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    off += 8 * n * d
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=off).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"{path}: label outside [0, {c})")
    if np.any(split > 2):
        raise ValueError(f"{path}: bad split code")
    return DatasetFile(feats, labels, split)


def import_text(path, val_classes: int, test_classes: int, delimiter: str = ",") -> DatasetFile:
    """Read rows of ``label, f1, ..., fd``.

    Distinct labels are sorted; the last ``test_classes`` become the test split,
    the ``val_classes`` before them validation, and the rest training.
    """
    table = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    if table.shape[1] < 2:
        raise ValueError(f"{path}: need a label column and at least one feature")
    raw_labels = table[:, 0]
    if np.any(raw_labels != np.round(raw_labels)):
        raise ValueError(f"{path}: labels must be integers")
    classes, labels = np.unique(raw_labels.astype(np.int64), return_inverse=True)
    n_train = classes.size - val_classes - test_classes
    if n_train < 0 or val_classes < 0 or test_classes < 0:
        raise ValueError(f"{path}: {classes.size} classes cannot fill the requested splits")
    split = np.repeat(np.arange(3, dtype=np.uint8), [n_train, val_classes, test_classes])
    return DatasetFile(table[:, 1:].copy(), labels.astype(np.int64), split)
