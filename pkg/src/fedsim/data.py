"""Dataset ingestion (MNIST IDX files), synthetic blobs, IID sharding, and label poisoning."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .common import derive_rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SYNTH_BLOB_SIGMA = 0.3


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class IdxBadMagicError(IdxFormatError):
    """Magic number does not match the expected file kind."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the declared payload is complete."""


class IdxCountMismatchError(IdxFormatError):
    """Image count and label count disagree."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labeled dataset: features (n, dim) float64, labels (n,) int64."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError("labels must be 1-D and match the number of feature rows")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if labs.size and (labs.min() < 0 or labs.max() >= self.class_count):
            raise ValueError("labels out of range for class_count")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.class_count)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def _read_exact(f, nbytes: int, path, what: str) -> bytes:
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return buf


def _read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse one big-endian unsigned-byte IDX file into an ndarray."""
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, path, "magic number"))[0]
        if magic != expected_magic:
            raise IdxBadMagicError(
                f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
        ndim = magic & 0xFF
        dims = struct.unpack(
            ">" + "I" * ndim, _read_exact(f, 4 * ndim, path, "dimension sizes")
        )
        count = int(np.prod(dims, dtype=np.int64))
        payload = _read_exact(f, count, path, "payload")
        if f.read(1):
            raise IdxFormatError(f"{path}: trailing bytes after declared payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file -> uint8 array of shape (n, rows, cols)."""
    return _read_idx(path, IMAGES_MAGIC)


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file -> uint8 array of shape (n,)."""
    return _read_idx(path, LABELS_MAGIC)


def write_idx_images(path, images: np.ndarray) -> None:
    """Serialize a (n, rows, cols) uint8 array to the IDX image format, bit-exact."""
    arr = np.ascontiguousarray(images, dtype=np.uint8)
    if arr.ndim != 3:
        raise ValueError("images must have shape (n, rows, cols)")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, *arr.shape))
        f.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    """Serialize a (n,) uint8 array to the IDX label format, bit-exact."""
    arr = np.ascontiguousarray(labels, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("labels must be 1-D")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, arr.shape[0]))
        f.write(arr.tobytes())


def load_idx(images_path, labels_path) -> Dataset:
    """Load an MNIST-style IDX image/label pair; pixels scaled to [0,1], K=10."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} out of range 0-9")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), 10)


def synth_generate(class_count: int, n: int, dim: int, seed: int) -> Dataset:
    """Gaussian blobs: one unit-norm random center per class, sigma 0.3, near-equal sizes."""
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    if n < class_count:
        raise ValueError("n must be >= class_count")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = derive_rng(seed)
    centers = rng.standard_normal((class_count, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    base, extra = divmod(n, class_count)
    counts = np.full(class_count, base, dtype=np.int64)
    counts[:extra] += 1
    labels = np.repeat(np.arange(class_count, dtype=np.int64), counts)
    features = centers[labels] + rng.normal(0.0, SYNTH_BLOB_SIGMA, size=(n, dim))
    perm = rng.permutation(n)
    return Dataset(features[perm], labels[perm], class_count)


def shard_iid(data: Dataset, m: int, seed: int) -> list[Dataset]:
    """Random permutation split into m near-equal disjoint shards (sizes differ by <= 1)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > len(data):
        raise ValueError(f"cannot split {len(data)} examples into {m} shards")
    perm = derive_rng(seed).permutation(len(data))
    return [data.subset(part) for part in np.array_split(perm, m)]


def poison_labels(shard: Dataset, source: int, target: int) -> Dataset:
    """Build D_aux: the shard's source-class examples relabeled as the target class."""
    k = shard.class_count
    if not (0 <= source < k and 0 <= target < k):
        raise ValueError(f"source/target must be valid classes < {k}")
    if source == target:
        raise ValueError("source and target classes must differ")
    mask = shard.labels == source
    features = shard.features[mask]
    labels = np.full(features.shape[0], target, dtype=np.int64)
    return Dataset(features, labels, k)


def stratified_split(data: Dataset, size: int, seed: int) -> tuple[Dataset, Dataset]:
    """Draw a class-stratified subset of `size` examples; returns (selected, remainder).

    Per-class quotas are proportional (largest-remainder rounding, capped by
    availability), selection within a class is a seeded draw without replacement.
    """
    if not 0 < size <= len(data):
        raise ValueError(f"size must be in [1, {len(data)}]")
    counts = data.class_counts()
    shares = counts * (size / len(data))
    quotas = np.floor(shares).astype(np.int64)
    remainders = shares - quotas
    shortfall = size - int(quotas.sum())
    for cls in np.lexsort((np.arange(data.class_count), -remainders)):
        if shortfall == 0:
            break
        if quotas[cls] < counts[cls]:
            quotas[cls] += 1
            shortfall -= 1
    # tiny classes may cap out; hand any leftover to classes with spare examples
    while shortfall > 0:
        spare = np.flatnonzero(quotas < counts)
        quotas[spare[0]] += 1
        shortfall -= 1
    rng = derive_rng(seed)
    chosen: list[np.ndarray] = []
    for cls in range(data.class_count):
        idx = np.flatnonzero(data.labels == cls)
        if quotas[cls] > 0:
            chosen.append(rng.choice(idx, size=int(quotas[cls]), replace=False))
    sel = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    rest_mask = np.ones(len(data), dtype=bool)
    rest_mask[sel] = False
    return data.subset(sel), data.subset(np.flatnonzero(rest_mask))


def merge(a: Dataset, b: Dataset) -> Dataset:
    """Concatenate two datasets over the same feature space and class set."""
    if a.class_count != b.class_count:
        raise ValueError("class_count mismatch")
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if a.dim != b.dim:
        raise ValueError("feature dimension mismatch")
    return Dataset(
        np.concatenate([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
        a.class_count,
    )
