"""IDX container parsing and desk-scale MNIST subsets.

IDX layout: a 4-byte big-endian magic (2051 for images, 2049 for labels),
one 4-byte big-endian size per dimension, then row-major unsigned bytes.
Files may also be gzip-compressed; :func:`read_idx_file` detects that.
"""

from __future__ import annotations

import gzip
import hashlib
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CrossLayerError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


class DataError(CrossLayerError):
    pass


class BadMagic(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class SubsetTooLarge(DataError):
    pass


def _read_header(data: bytes, expected_magic: int, ndim: int) -> tuple[int, ...]:
    if len(data) < 4:
        raise TruncatedPayload("stream shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise BadMagic(f"magic {magic}, expected {expected_magic}")
    end = 4 + 4 * ndim
    if len(data) < end:
        raise TruncatedPayload("stream ends inside the dimension header")
    return struct.unpack(f">{ndim}I", data[4:end])


def parse_idx_images(data: bytes) -> np.ndarray:
    """Return a float32 array of shape (count, rows, cols) scaled to [0, 1]."""
    return parse_idx_images_raw(data).astype(np.float32) / np.float32(255.0)


def parse_idx_images_raw(data: bytes) -> np.ndarray:
    dims = _read_header(data, IMAGE_MAGIC, 3)
    payload = memoryview(data)[16:]
    expected = dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise TruncatedPayload(f"header declares {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    (count,) = _read_header(data, LABEL_MAGIC, 1)
    payload = memoryview(data)[8:]
    if len(payload) != count:
        raise TruncatedPayload(f"header declares {count} labels, found {len(payload)}")
    labels = np.frombuffer(payload, dtype=np.uint8).copy()
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise LabelOutOfRange(f"label {labels[bad]} at index {bad}")
    return labels


def serialize_idx_images(raw: np.ndarray) -> bytes:
    raw = np.asarray(raw, dtype=np.uint8)
    if raw.ndim != 3:
        raise ValueError("image tensor must be 3-D (count, rows, cols)")
    return struct.pack(">IIII", IMAGE_MAGIC, *raw.shape) + raw.tobytes(order="C")


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()


def read_idx_file(path: str | Path) -> bytes:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


@dataclass(frozen=True)
class Sample:
    pixels: np.ndarray  # (784,) float32 in [0, 1]
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ordered collection of samples.

    ``images`` has shape (n, 28, 28) float32; ``labels`` (n,) uint8.
    """

    images: np.ndarray
    labels: np.ndarray
    origin: str

    def __post_init__(self) -> None:
        if len(self.images) == 0:
            raise DataError("dataset is empty")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i].reshape(-1), int(self.labels[i]))

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    @classmethod
    def from_idx(cls, image_bytes: bytes, label_bytes: bytes) -> "Dataset":
        digest = hashlib.sha256(image_bytes + label_bytes).hexdigest()[:16]
        return cls(parse_idx_images(image_bytes), parse_idx_labels(label_bytes), digest)

    @classmethod
    def from_files(cls, images: str | Path, labels: str | Path) -> "Dataset":
        return cls.from_idx(read_idx_file(images), read_idx_file(labels))

    def take(self, indices: Sequence[int], tag: str) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], f"{self.origin}/{tag}")


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Deterministic stratified subset of ``n`` samples.

    Per-class quotas follow the largest-remainder rule, so each class is
    within one sample of its proportional share. Membership is drawn with
    a seeded permutation per class; the result keeps the source order.
    """
    return dataset.take(subset_indices(dataset, n, seed), f"subset{n}:{seed}")


def subset_indices(dataset: Dataset, n: int, seed: int) -> np.ndarray:
    total = len(dataset)
    if n > total:
        raise SubsetTooLarge(f"requested {n} of {total} samples")
    if n <= 0:
        raise DataError("subset size must be positive")
    if n == total:
        return np.arange(total)
    labels = np.asarray(dataset.labels)
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * n / total
    quota = np.floor(exact).astype(np.int64)
    short = n - int(quota.sum())
    # largest remainder first, lower class id breaks ties
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - quota[i]), classes[i]))
    for i in order[:short]:
        quota[i] += 1
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    chosen = []
    for cls_, q in zip(classes, quota):
        members = np.flatnonzero(labels == cls_)
        chosen.append(members[rng.permutation(len(members))[:q]])
    return np.sort(np.concatenate(chosen))


FIXTURE_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("crosslayer") / "data" / name))


def load_fixture(split: str = "test") -> Dataset:
    """Bundled MNIST subset: ``"train"`` (1000 samples) or ``"test"`` (100)."""
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    return Dataset.from_files(
        fixture_path(FIXTURE_FILES[f"{split}_images"]),
        fixture_path(FIXTURE_FILES[f"{split}_labels"]),
    )
