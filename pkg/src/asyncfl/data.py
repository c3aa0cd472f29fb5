"""Dataset ingestion (IDX files, synthetic generator) and device partitioning."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when an IDX file does not match the published byte format."""


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix + labels; features normalized to [0, 1]."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.labels.size and int(self.labels.max()) >= self.num_classes:
            raise ValueError("label value exceeds num_classes")

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Partition:
    """Disjoint per-device index sets into a Dataset."""

    device_indices: tuple

    def __post_init__(self):
        seen = set()
        for idx in self.device_indices:
            s = set(int(i) for i in idx)
            if seen & s:
                raise ValueError("device index sets are not pairwise disjoint")
            seen |= s

    @property
    def num_devices(self) -> int:
        return len(self.device_indices)

    def sizes(self) -> np.ndarray:
        return np.array([len(idx) for idx in self.device_indices])


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an MNIST-style IDX image/label file pair into a Dataset.

    Pixels are scaled to [0, 1] by dividing by 255; num_classes is fixed at 10.
    """
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise IdxFormatError(f"{images_path}: truncated image header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        payload = f.read()
    if len(payload) != n * rows * cols:
        raise IdxFormatError(
            f"{images_path}: payload holds {len(payload)} bytes, "
            f"header promises {n * rows * cols}"
        )
    images = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)

    with open(labels_path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise IdxFormatError(f"{labels_path}: truncated label header")
        magic, n_labels = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        label_bytes = f.read()
    if len(label_bytes) != n_labels:
        raise IdxFormatError(
            f"{labels_path}: payload holds {len(label_bytes)} labels, "
            f"header promises {n_labels}"
        )
    if n_labels != n:
        raise IdxFormatError(
            f"sample count mismatch: {images_path} has {n} images but "
            f"{labels_path} has {n_labels} labels"
        )
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes=10)


def write_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int):
    """Write a Dataset back to IDX bytes (inverse of load_idx for fixtures)."""
    if rows * cols != dataset.num_features:
        raise ValueError("rows * cols must equal num_features")
    pixels = np.round(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.num_samples, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, dataset.num_samples))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def gen_synthetic(num_samples: int, num_classes: int, num_features: int,
                  cluster_spread: float, seed: int) -> Dataset:
    """Gaussian clusters around per-class centroids, clipped to [0, 1].

    Labels cycle through classes, so counts are balanced up to remainder.
    Deterministic for a fixed seed.
    """
    if min(num_samples, num_classes, num_features) < 1:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(seed)
    centroids = rng.uniform(0.2, 0.8, size=(num_classes, num_features))
    labels = np.arange(num_samples) % num_classes
    noise = cluster_spread * rng.standard_normal((num_samples, num_features))
    features = np.clip(centroids[labels] + noise, 0.0, 1.0)
    return Dataset(features, labels, num_classes)


def partition_iid(dataset: Dataset, num_devices: int, seed: int) -> Partition:
    """Random permutation split into near-equal contiguous chunks.

    The first (num_samples mod N) devices get one extra sample.
    """
    n = dataset.num_samples
    if num_devices > n:
        raise ValueError(f"cannot split {n} samples across {num_devices} devices")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, num_devices)
    chunks = []
    start = 0
    for k in range(num_devices):
        size = base + (1 if k < extra else 0)
        chunks.append(perm[start:start + size])
        start += size
    return Partition(tuple(chunks))


def partition_shards(dataset: Dataset, num_devices: int, shards_per_device: int,
                     seed: int) -> Partition:
    """Label-sorted shard split: each device gets shards_per_device random shards.

    With 2 shards per device every device sees at most 2 distinct labels.
    When N * shards_per_device does not divide num_samples the tail is truncated.
    """
    if shards_per_device < 1:
        raise ValueError("shards_per_device must be positive")
    n = dataset.num_samples
    num_shards = num_devices * shards_per_device
    shard_size = n // num_shards
    if shard_size < 1:
        raise ValueError("not enough samples for the requested shard count")
    if shard_size * num_shards != n:
        warnings.warn(
            f"truncating {n - shard_size * num_shards} tail samples to form "
            f"{num_shards} shards of {shard_size}"
        )
    order = np.argsort(dataset.labels, kind="stable")
    deal = np.random.default_rng(seed).permutation(num_shards)
    chunks = []
    for k in range(num_devices):
        mine = deal[k * shards_per_device:(k + 1) * shards_per_device]
        chunks.append(np.concatenate(
            [order[s * shard_size:(s + 1) * shard_size] for s in mine]))
    return Partition(tuple(chunks))


def sample_batch(device_indices: np.ndarray, batch_size: int, rng) -> np.ndarray:
    """Uniform sample without replacement of min(batch_size, |S_k|) indices."""
    if len(device_indices) == 0:
        raise ValueError("cannot sample from an empty device set")
    size = min(batch_size, len(device_indices))
    return rng.choice(device_indices, size=size, replace=False)
