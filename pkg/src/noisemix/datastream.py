"""Incremental task streams: synthetic cluster data and embedding-file ingestion.

A stream is a fixed sequence of tasks with pairwise disjoint class sets.
Streams are immutable after construction and fully determined by their seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import SeededRng, derive_seed

TRAIN_FRACTION = 0.8
# Paired "confusable" class means sit this fraction of the sphere radius apart,
# so they coincide when separation is zero and overlap heavily otherwise.
OVERLAP_OFFSET_FRACTION = 0.15


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class TaskDataset:
    """One session's data: disjoint-class train and test splits."""

    task_index: int  # 1-based
    train: tuple[Sample, ...]
    test: tuple[Sample, ...]
    class_set: tuple[int, ...]

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _to_arrays(self.train)

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _to_arrays(self.test)


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[TaskDataset, ...]
    class_order: tuple[int, ...]
    seed: int

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].train[0].features.shape[0]

    def content_hash(self) -> str:
        """SHA-256 over every sample and the class order; identifies the stream."""
        h = hashlib.sha256()
        h.update(np.asarray(self.class_order, dtype=np.int64).tobytes())
        for task in self.tasks:
            for split in (task.train, task.test):
                for s in split:
                    h.update(np.int64(s.label).tobytes())
                    h.update(np.ascontiguousarray(s.features, dtype=np.float64).tobytes())
        return h.hexdigest()


def _to_arrays(samples: tuple[Sample, ...]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.features for s in samples]).astype(np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def shuffle_class_order(num_classes: int, seed: int) -> tuple[int, ...]:
    """Deterministic Fisher-Yates permutation of the class identifiers."""
    return tuple(int(c) for c in SeededRng(seed).permutation(num_classes))


def partition_classes(order: tuple[int, ...], num_tasks: int) -> list[tuple[int, ...]]:
    """Split a class order into num_tasks contiguous chunks.

    When the count does not divide evenly the earlier tasks take one extra
    class each.
    """
    n = len(order)
    base, extra = divmod(n, num_tasks)
    chunks = []
    pos = 0
    for t in range(num_tasks):
        size = base + (1 if t < extra else 0)
        chunks.append(tuple(order[pos : pos + size]))
        pos += size
    return chunks


def make_synthetic_stream(
    num_classes: int,
    samples_per_class: int,
    dim: int,
    separation: float,
    overlap_classes: int = 0,
    num_tasks: int = 1,
    seed: int = 1993,
) -> TaskStream:
    """Gaussian cluster stream with optional cross-task confusable class pairs.

    Each class is an isotropic unit-variance Gaussian whose mean lies on a
    sphere of radius ``separation``. ``overlap_classes`` classes are arranged
    into pairs assigned to different tasks whose means sit close together
    (see OVERLAP_OFFSET_FRACTION), creating features that confuse a linear
    classifier across task boundaries. Per class the first 80% of draws are
    the train split, the rest the test split. Fully determined by ``seed``.
    """
    if num_tasks < 1:
        raise ValueError("need at least one task")
    if num_tasks > num_classes:
        raise ValueError(f"cannot split {num_classes} classes into {num_tasks} tasks")
    if samples_per_class < 5:
        raise ValueError("samples_per_class must be at least 5")
    if dim < 2:
        raise ValueError("feature dimension must be at least 2")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if not 0 <= overlap_classes <= num_classes:
        raise ValueError("overlap_classes out of range")

    master = SeededRng(seed)
    order = shuffle_class_order(num_classes, seed)
    task_classes = partition_classes(order, num_tasks)
    means = synthetic_class_means(num_classes, dim, separation, overlap_classes, num_tasks, seed)

    n_train = int(TRAIN_FRACTION * samples_per_class)
    tasks = []
    for t, classes in enumerate(task_classes, start=1):
        train: list[Sample] = []
        test: list[Sample] = []
        for c in classes:
            rng_c = master.split("samples", c)
            draws = means[c] + rng_c.standard_normal(samples_per_class, dim)
            for i in range(samples_per_class):
                sample = Sample(features=draws[i], label=c)
                (train if i < n_train else test).append(sample)
        tasks.append(TaskDataset(task_index=t, train=tuple(train), test=tuple(test), class_set=classes))
    return TaskStream(tasks=tuple(tasks), class_order=order, seed=seed)


def synthetic_class_means(
    num_classes: int,
    dim: int,
    separation: float,
    overlap_classes: int,
    num_tasks: int,
    seed: int,
) -> np.ndarray:
    """The planted cluster means of the synthetic stream (num_classes x dim)."""
    master = SeededRng(seed)
    order = shuffle_class_order(num_classes, seed)
    task_classes = partition_classes(order, num_tasks)
    mean_rng = master.split("means")
    means = np.zeros((num_classes, dim))
    for c in range(num_classes):
        v = mean_rng.standard_normal(dim)
        norm = float(np.linalg.norm(v))
        if separation > 0 and norm > 0:
            means[c] = v * (separation / norm)
    _plant_overlap_pairs(means, task_classes, overlap_classes, separation, master.split("overlap"))
    return means


def _plant_overlap_pairs(means, task_classes, overlap_classes, separation, rng):
    pairs = overlap_classes // 2
    if pairs == 0:
        return
    num_tasks = len(task_classes)
    cursors = [0] * num_tasks
    for j in range(pairs):
        ta = j % num_tasks
        tb = (j + 1) % num_tasks
        if cursors[ta] >= len(task_classes[ta]) or cursors[tb] >= len(task_classes[tb]):
            raise ValueError("overlap_classes too large for the task layout")
        a = task_classes[ta][cursors[ta]]
        cursors[ta] += 1
        b = task_classes[tb][cursors[tb]]
        cursors[tb] += 1
        direction = rng.standard_normal(means.shape[1])
        norm = float(np.linalg.norm(direction))
        offset = direction * (OVERLAP_OFFSET_FRACTION * separation / norm) if norm > 0 else 0.0
        means[b] = means[a] + offset


def load_embedding_stream(path: str | Path, num_tasks: int, seed: int) -> TaskStream:
    """Build a stream from a CSV of precomputed feature embeddings.

    Expected format: header ``label,f0,f1,...,f{d-1}``, then one row per
    sample with an integer label followed by d decimal reals. Labels must be
    the contiguous range 0..C-1. Classes are shuffled with ``seed`` and
    partitioned into ``num_tasks`` tasks. A sibling file with the ``.split``
    extension may list test-set sample indices (0-based row order, one per
    line); when absent each class gets a seeded 80/20 split.
    """
    path = Path(path)
    labels, features = _parse_embedding_csv(path)
    classes = sorted(set(labels))
    num_classes = len(classes)
    if classes != list(range(num_classes)):
        raise ValueError("labels must form the contiguous range 0..C-1")
    if num_classes < num_tasks:
        raise ValueError(f"file has {num_classes} classes, fewer than {num_tasks} tasks")

    order = shuffle_class_order(num_classes, seed)
    task_classes = partition_classes(order, num_tasks)

    test_indices = _read_split_file(path.with_suffix(".split"), len(labels))
    by_class: dict[int, list[int]] = {c: [] for c in classes}
    for i, lab in enumerate(labels):
        by_class[lab].append(i)

    tasks = []
    for t, chunk in enumerate(task_classes, start=1):
        train: list[Sample] = []
        test: list[Sample] = []
        for c in chunk:
            idxs = by_class[c]
            if test_indices is not None:
                for i in idxs:
                    sample = Sample(features=features[i], label=c)
                    (test if i in test_indices else train).append(sample)
            else:
                rng_c = SeededRng(derive_seed(seed, "split", c))
                perm = rng_c.permutation(len(idxs))
                n_train = max(1, int(TRAIN_FRACTION * len(idxs)))
                for k, p in enumerate(perm):
                    sample = Sample(features=features[idxs[int(p)]], label=c)
                    (train if k < n_train else test).append(sample)
        if not test:
            raise ValueError(f"task {t} ended up with an empty test split")
        if not train:
            raise ValueError(f"task {t} ended up with an empty train split")
        trained_classes = {s.label for s in train}
        missing = [c for c in chunk if c not in trained_classes]
        if missing:
            raise ValueError(f"classes {missing} have no training samples")
        tasks.append(TaskDataset(task_index=t, train=tuple(train), test=tuple(test), class_set=chunk))
    return TaskStream(tasks=tuple(tasks), class_order=order, seed=seed)


def _parse_embedding_csv(path: Path) -> tuple[list[int], np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "label" or len(header) < 2:
        raise ValueError(f"{path}: header must be 'label,f0,...', got {lines[0]!r}")
    dim = len(header) - 1
    expected = ["label"] + [f"f{i}" for i in range(dim)]
    if header != expected:
        raise ValueError(f"{path}: malformed header columns")
    labels: list[int] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(parts)}")
        try:
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed value ({exc})") from None
        if labels[-1] < 0:
            raise ValueError(f"{path}:{lineno}: labels must be non-negative")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return labels, np.asarray(rows, dtype=np.float64)


def _read_split_file(path: Path, n_samples: int) -> set[int] | None:
    if not path.exists():
        return None
    indices = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                idx = int(line)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected an integer index") from None
            if not 0 <= idx < n_samples:
                raise ValueError(f"{path}:{lineno}: index {idx} out of range")
            indices.add(idx)
    return indices
