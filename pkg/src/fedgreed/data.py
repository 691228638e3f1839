"""Dataset sources, Dirichlet non-IID partitioning and the server-side split."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError, PartitionInfeasibleError
from .model import Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_PARTITION_RETRIES = 100


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix in (".gz", ".gzip") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(path: Path, expected_magic: int, ndims: int) -> np.ndarray:
    raw = _read_bytes(path)
    header = 4 + 4 * ndims
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated at offset 0 (no magic number)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}, need {header} bytes")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    size = math.prod(dims)
    if len(raw) - header < size:
        raise FormatError(
            f"{path}: truncated payload at offset {len(raw)}, expected {header + size} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label pair (MNIST layout), optionally gzipped.

    Pixels are scaled to [0, 1] and each image is flattened to one row.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    images = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{labels_path}: {labels.shape[0]} labels at offset 4 but "
            f"{images_path} holds {images.shape[0]} images"
        )
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels, num_classes)


def class_means(n_features: int, n_classes: int, separation: float) -> np.ndarray:
    """Fixed, seed-independent cluster centres with pairwise distance ``separation``.

    With enough dimensions the centres sit on scaled basis vectors (a regular
    simplex); otherwise they are strung along the first axis, consecutive
    centres ``separation`` apart.
    """
    means = np.zeros((n_classes, n_features))
    if n_features >= n_classes:
        means[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(n_classes)
    return means


def synthetic_blobs(n_samples: int, n_features: int, n_classes: int,
                    class_separation: float, seed: int) -> Dataset:
    if min(n_samples, n_features, n_classes) < 1:
        raise InvalidInputError("n_samples, n_features and n_classes must be positive")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    means = class_means(n_features, n_classes, class_separation)
    features = means[labels] + rng.standard_normal((n_samples, n_features))
    return Dataset(features, labels, n_classes)


@dataclass(frozen=True)
class PartitionPlan:
    assignments: list[np.ndarray]
    alpha: float
    seed: int
    attempts: int = 1

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def class_counts(self, data: Dataset) -> np.ndarray:
        """Clients x classes matrix of sample counts."""
        return np.stack([
            np.bincount(data.labels[idx], minlength=data.num_classes) for idx in self.assignments
        ])


def _draw_partition(labels: np.ndarray, num_classes: int, n_clients: int, alpha: float,
                    rng: np.random.Generator) -> list[np.ndarray]:
    buckets: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        p = rng.dirichlet(np.full(n_clients, alpha))
        if not np.all(np.isfinite(p)) or p.sum() <= 0:
            # every gamma draw underflowed; the limit is a point mass on one client
            p = np.zeros(n_clients)
            p[rng.integers(n_clients)] = 1.0
        counts = rng.multinomial(idx.size, p / p.sum())
        idx = rng.permutation(idx)
        for client, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            buckets[client].append(chunk)
    return [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64) for b in buckets]


def dirichlet_partition(data: Dataset, n_clients: int, alpha: float, seed: int) -> PartitionPlan:
    """Split sample indices across clients with per-class Dirichlet proportions.

    A plan that leaves some client empty is redrawn with ``seed + 1``,
    ``seed + 2``, ... up to ``MAX_PARTITION_RETRIES`` attempts.
    """
    if n_clients < 1:
        raise InvalidInputError("n_clients must be >= 1")
    if not alpha > 0:
        raise InvalidInputError("alpha must be positive")
    if len(data) < n_clients:
        raise PartitionInfeasibleError(f"{len(data)} samples cannot cover {n_clients} clients")
    for attempt in range(MAX_PARTITION_RETRIES):
        rng = np.random.default_rng(seed + attempt)
        assignments = _draw_partition(data.labels, data.num_classes, n_clients, alpha, rng)
        if all(a.size > 0 for a in assignments):
            return PartitionPlan(assignments, alpha, seed, attempts=attempt + 1)
    raise PartitionInfeasibleError(
        f"no partition without empty clients after {MAX_PARTITION_RETRIES} draws "
        f"(alpha={alpha}, n_clients={n_clients}, n_samples={len(data)})"
    )


@dataclass(frozen=True)
class ServerSplit:
    selection_set: Dataset
    evaluation_set: Dataset
    selection_indices: np.ndarray
    evaluation_indices: np.ndarray


def split_server_set(data: Dataset, seed: int) -> ServerSplit:
    """Seeded shuffle; the first ceil(n/2) samples score candidates, the rest report accuracy."""
    if len(data) < 2:
        raise InvalidInputError("server set needs at least 2 samples")
    order = np.random.default_rng(seed).permutation(len(data))
    half = (len(data) + 1) // 2
    sel, ev = order[:half], order[half:]
    return ServerSplit(data.subset(sel), data.subset(ev), sel, ev)
