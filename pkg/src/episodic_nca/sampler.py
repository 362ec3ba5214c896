"""Episodic, plain-epoch and fixed-composition batch construction."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .numerics import as_generator, as_matrix

SPLITS = ("train", "val", "test")


@dataclass(eq=False)
class LabeledDataset:
    """Feature matrix with dense integer class labels for one split."""

    features: np.ndarray
    labels: np.ndarray
    split_name: str = "train"
    class_names: list[int] | None = None

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.split_name not in SPLITS:
            raise ValueError(f"unknown split {self.split_name!r}")
        if self.labels.size == 0:
            raise ValueError("dataset is empty")
        present = np.unique(self.labels)
        if present[0] != 0 or present[-1] != present.size - 1:
            raise ValueError("class ids must be dense in [0, num_classes)")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @cached_property
    def class_indices(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(self.num_classes)]


@dataclass(frozen=True)
class EpisodeConfig:
    ways: int
    shots: int
    queries: int

    def __post_init__(self):
        if self.ways < 2 or self.shots < 1 or self.queries < 1:
            raise ValueError(
                f"episode needs ways >= 2, shots >= 1, queries >= 1; got {self}"
            )

    @property
    def size(self) -> int:
        return self.ways * (self.shots + self.queries)


@dataclass(frozen=True)
class BatchShapeConfig:
    """Episode described by shots, images per class and batch size."""

    shots: int
    images_per_class: int
    batch_size: int

    def __post_init__(self):
        if self.images_per_class <= self.shots:
            raise ValueError(
                f"images_per_class ({self.images_per_class}) must exceed shots ({self.shots})"
            )
        if self.batch_size % self.images_per_class:
            raise ValueError(
                f"batch_size {self.batch_size} is not divisible by "
                f"images_per_class {self.images_per_class}"
            )
        if self.batch_size // self.images_per_class < 2:
            raise ValueError("batch must hold at least two classes")


def shape_to_episode(cfg: BatchShapeConfig) -> EpisodeConfig:
    return EpisodeConfig(
        ways=cfg.batch_size // cfg.images_per_class,
        shots=cfg.shots,
        queries=cfg.images_per_class - cfg.shots,
    )


@dataclass
class Episode:
    """Support and query index/label pairs of one episode."""

    support: list[tuple[int, int]] = field(default_factory=list)
    query: list[tuple[int, int]] = field(default_factory=list)

    @property
    def support_idx(self) -> np.ndarray:
        return np.array([i for i, _ in self.support], dtype=np.intp)

    @property
    def support_labels(self) -> np.ndarray:
        return np.array([y for _, y in self.support], dtype=np.int64)

    @property
    def query_idx(self) -> np.ndarray:
        return np.array([i for i, _ in self.query], dtype=np.intp)

    @property
    def query_labels(self) -> np.ndarray:
        return np.array([y for _, y in self.query], dtype=np.int64)

    def check(self, cfg: EpisodeConfig) -> None:
        """Raise ``AssertionError`` unless the episode matches ``cfg`` exactly."""
        s_lab, q_lab = self.support_labels, self.query_labels
        labels = np.unique(np.concatenate([s_lab, q_lab]))
        assert labels.size == cfg.ways, "wrong number of ways"
        for y in labels:
            assert np.sum(s_lab == y) == cfg.shots, f"class {y}: wrong shot count"
            assert np.sum(q_lab == y) == cfg.queries, f"class {y}: wrong query count"
        idx = np.concatenate([self.support_idx, self.query_idx])
        assert np.unique(idx).size == idx.size, "index repeated within episode"


def _check_class_sizes(ds: LabeledDataset, need: int, n_classes: int) -> None:
    if ds.num_classes < n_classes:
        raise ValueError(
            f"need {n_classes} classes but the {ds.split_name} split has {ds.num_classes}"
        )
    for k, idx in enumerate(ds.class_indices):
        if idx.size < need:
            raise ValueError(
                f"class {k} of the {ds.split_name} split has {idx.size} examples, "
                f"{need} required"
            )


def sample_episode(ds: LabeledDataset, cfg: EpisodeConfig, rng) -> Episode:
    """Draw ``cfg.ways`` classes, then ``shots + queries`` distinct images of each.

    Draws are without replacement inside the episode; successive calls are
    independent, so across episodes images are sampled with replacement.
    """
    gen = as_generator(rng)
    per_class = cfg.shots + cfg.queries
    _check_class_sizes(ds, per_class, cfg.ways)
    classes = np.sort(gen.choice(ds.num_classes, size=cfg.ways, replace=False))
    ep = Episode()
    for y in classes:
        picked = gen.choice(ds.class_indices[y], size=per_class, replace=False)
        ep.support.extend((int(i), int(y)) for i in picked[: cfg.shots])
        ep.query.extend((int(i), int(y)) for i in picked[cfg.shots:])
    return ep


def epoch_batches(ds: LabeledDataset | int, batch_size: int, rng) -> list[np.ndarray]:
    """Shuffle all indices once and cut them into batches; the last may be short."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    n = ds if isinstance(ds, (int, np.integer)) else len(ds)
    perm = as_generator(rng).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def sample_replacement_batch(ds: LabeledDataset, batch_size: int, rng) -> np.ndarray:
    """Uniform batch of distinct indices, drawn independently of previous batches."""
    if batch_size < 2 or batch_size > len(ds):
        raise ValueError(f"batch_size {batch_size} infeasible for {len(ds)} examples")
    return as_generator(rng).choice(len(ds), size=batch_size, replace=False)


def sample_fixed_composition_batch(
    ds: LabeledDataset, classes_per_batch: int, images_per_class: int, rng
) -> np.ndarray:
    """Batch of ``classes_per_batch`` distinct classes with ``images_per_class`` each."""
    if classes_per_batch < 1 or images_per_class < 1:
        raise ValueError("classes_per_batch and images_per_class must be positive")
    gen = as_generator(rng)
    _check_class_sizes(ds, images_per_class, classes_per_batch)
    classes = np.sort(gen.choice(ds.num_classes, size=classes_per_batch, replace=False))
    return np.concatenate(
        [gen.choice(ds.class_indices[y], size=images_per_class, replace=False) for y in classes]
    )
