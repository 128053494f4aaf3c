"""MNIST IDX parsing, synthetic blobs and seeded mini-batches."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
MNIST_CLASSES = 10


class IdxParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.intp)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError(f"features {x.shape} and labels {y.shape} do not match")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.features[:n], self.labels[:n], self.num_classes)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def _header(data: bytes, magic: int, rank: int) -> tuple[int, ...]:
    if len(data) < 4:
        raise IdxParseError("truncated magic number", len(data))
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise IdxParseError(f"bad magic {found:#010x}, expected {magic} ({magic:#010x})", 0)
    end = 4 + 4 * rank
    if len(data) < end:
        raise IdxParseError("truncated dimension header", len(data))
    dims = struct.unpack(f">{rank}I", data[4:end])
    need = end + math.prod(dims)
    if need > 2**40:
        raise IdxParseError(f"dimension sizes {dims} overflow", 4)
    if len(data) < need:
        raise IdxParseError(f"payload needs {need - end} bytes, found {len(data) - end}", len(data))
    return dims


def parse_idx_images(data: bytes) -> np.ndarray:
    """Rank-3 uint8 image file to an ``(count, rows*cols)`` matrix scaled to [0, 1]."""
    data = _maybe_gunzip(bytes(data))
    count, rows, cols = _header(data, IMAGE_MAGIC, 3)
    raw = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return raw.reshape(count, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(data: bytes, num_classes: int | None = MNIST_CLASSES) -> np.ndarray:
    data = _maybe_gunzip(bytes(data))
    (count,) = _header(data, LABEL_MAGIC, 1)
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.intp)
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        i = int(np.argmax(labels >= num_classes))
        raise IdxParseError(f"label {labels[i]} out of range [0, {num_classes})", 8 + i)
    return labels


def encode_idx_images(images: np.ndarray) -> bytes:
    """``(count, rows, cols)`` uint8 array to IDX bytes."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    return struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).ravel()
    return struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()


def load_mnist(images_path, labels_path, limit: int | None = None) -> Dataset:
    x = parse_idx_images(Path(images_path).read_bytes())
    y = parse_idx_labels(Path(labels_path).read_bytes())
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} images but {y.shape[0]} labels")
    ds = Dataset(x, y, MNIST_CLASSES)
    return ds.subset(limit) if limit else ds


def synthetic_blobs(num_classes: int, samples_per_class: int, feature_dim: int,
                    spread: float, rng=None) -> Dataset:
    """Gaussian clusters around seeded class centers, clipped to [0, 1].

    Centers are uniform in [0.2, 0.8]^d; rows are interleaved by class.
    """
    if min(num_classes, samples_per_class, feature_dim) < 1:
        raise ValueError("all counts must be >= 1")
    rng = np.random.default_rng(rng)
    centers = rng.uniform(0.2, 0.8, (num_classes, feature_dim))
    labels = np.tile(np.arange(num_classes), samples_per_class)
    noise = rng.standard_normal((labels.size, feature_dim)) * spread
    x = np.clip(centers[labels] + noise, 0.0, 1.0)
    return Dataset(x, labels, num_classes)


class BatchIterator:
    """Endless stream of mini-batches; each epoch is a fresh seeded permutation.

    The final short batch of an epoch is kept.
    """

    def __init__(self, dataset: Dataset, batch_size: int = 128, seed: int = 0):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self._queue: list[np.ndarray] = []

    def epoch_indices(self, epoch: int) -> list[np.ndarray]:
        perm = np.random.default_rng([self.seed, epoch]).permutation(len(self.dataset))
        return [perm[s:s + self.batch_size] for s in range(0, perm.size, self.batch_size)]

    def __iter__(self):
        return self

    def __next__(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._queue:
            self._queue = self.epoch_indices(self.epoch)
            self.epoch += 1
        idx = self._queue.pop(0)
        return self.dataset.features[idx], self.dataset.labels[idx]
