"""Datasets and non-IID partitioning.

The default corpus is synthetic Gaussian blobs (4 classes, 16 features);
real data comes in through a CSV loader with a trailing integer "label"
column. Partitioning draws per-class node proportions from a Dirichlet,
the standard skewed-label benchmark split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParameterError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ParameterError("features must be 2-D with one label per row")
        if len(self.labels) and not (
            (0 <= self.labels).all() and (self.labels < self.class_count).all()
        ):
            raise ParameterError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.class_count)


def synthetic_blobs(train_size: int = 2000, test_size: int = 500,
                    feature_dim: int = 16, class_count: int = 4,
                    seed: int = 0, center_scale: float = 3.0) -> tuple[Dataset, Dataset]:
    """Gaussian blobs around well-separated class centers; unit noise."""
    rng = np.random.default_rng([seed, 0xDA7A])
    centers = rng.normal(0.0, 1.0, size=(class_count, feature_dim))
    centers *= center_scale / np.linalg.norm(centers, axis=1, keepdims=True) * np.sqrt(feature_dim) / 2

    def draw(count: int) -> Dataset:
        labels = rng.integers(0, class_count, size=count)
        features = centers[labels] + rng.normal(0.0, 1.0, size=(count, feature_dim))
        return Dataset(features, labels, class_count)

    return draw(train_size), draw(test_size)


def load_csv(path: str) -> Dataset:
    """Header row, decimal feature columns, final column named 'label'."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise FormatError(f"{path}: last column must be named 'label'")
        features, labels = [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{row_num}: expected {len(header)} columns")
            try:
                features.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as e:
                raise FormatError(f"{path}:{row_num}: {e}") from e
    if not labels:
        raise FormatError(f"{path}: no data rows")
    if min(labels) < 0:
        raise FormatError(f"{path}: negative label")
    return Dataset(np.array(features), np.array(labels), class_count=max(labels) + 1)


@dataclass
class PartitionSpec:
    """Disjoint cover of the training set, one index array per node."""

    assignment: dict[int, np.ndarray]
    alpha: float
    seed: int


def dirichlet_partition(dataset: Dataset, node_count: int, alpha: float,
                        seed: int) -> PartitionSpec:
    """Skewed-label split: per-class proportions across nodes ~ Dirichlet(alpha).

    Redraws (deterministically) until every node holds at least one sample.
    """
    if len(dataset) == 0:
        raise ParameterError("cannot partition an empty dataset")
    if node_count < 1:
        raise ParameterError("node_count must be >= 1")
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    rng = np.random.default_rng([seed, 0xD12])
    for _ in range(100):
        buckets: list[list[int]] = [[] for _ in range(node_count)]
        for cls in range(dataset.class_count):
            cls_idx = np.flatnonzero(dataset.labels == cls)
            rng.shuffle(cls_idx)
            proportions = rng.dirichlet(np.full(node_count, alpha))
            splits = (np.cumsum(proportions) * len(cls_idx)).round().astype(int)[:-1]
            for node, chunk in enumerate(np.split(cls_idx, splits)):
                buckets[node].extend(chunk.tolist())
        if all(buckets):
            assignment = {
                node: np.sort(np.array(idx, dtype=np.int64))
                for node, idx in enumerate(buckets)
            }
            return PartitionSpec(assignment, alpha, seed)
    raise ParameterError(
        f"could not give every one of {node_count} nodes a sample; "
        f"dataset too small for alpha={alpha}"
    )
