"""Datasets: IDX files, synthetic class blobs and the bundled 5k MNIST subset."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, magic: int) -> np.ndarray:
    """Parse a big-endian unsigned-byte IDX file (plain or gzipped)."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at byte 0")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{found:08x} at byte 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise IdxFormatError(f"{path}: truncated dimension header at byte {len(raw)}, need {end}")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    size = int(np.prod(dims))
    if len(raw) < end + size:
        raise IdxFormatError(f"{path}: truncated data at byte {len(raw)}, expected {end + size} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=end).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX; a ``.gz`` suffix compresses it."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(header + array.tobytes())


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Images scaled to [0, 1] as ``(n, rows, cols, 1)`` with integer labels."""
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch at byte 4: {len(images)} images in {images_path}, {len(labels)} labels in {labels_path}"
        )
    return Dataset(images[..., None].astype(np.float64) / 255.0, labels.astype(np.int64))


def gen_synthetic(dims: int, classes: int, count: int, seed: int, margin: float = 1.0) -> Dataset:
    """Class blobs that the nearest-centroid rule separates with ``margin``.

    Each point sits within distance 1 of its class centre and centres are
    at least ``2 (1 + margin)`` apart, so the affine nearest-centroid
    classifier has geometric margin at least ``margin``.
    """
    if dims < 1 or classes < 2:
        raise ValueError(f"need dims >= 1 and classes >= 2, got {dims}, {classes}")
    if count < classes:
        raise ValueError(f"count {count} is smaller than the number of classes {classes}")
    rng = np.random.default_rng(seed)
    if dims == 1:
        centres = np.arange(classes, dtype=np.float64)[:, None]
    else:
        centres = rng.standard_normal((classes, dims))
    gaps = np.linalg.norm(centres[:, None] - centres[None], axis=-1)
    closest = gaps[~np.eye(classes, dtype=bool)].min()
    centres *= 2 * (1 + margin) / closest
    y = rng.permutation(np.arange(count) % classes)
    noise = rng.standard_normal((count, dims)) / np.sqrt(dims)
    noise /= np.maximum(1.0, np.linalg.norm(noise, axis=1, keepdims=True))
    return Dataset(centres[y] + noise, y.astype(np.int64))


def save_npz(path, data: Dataset) -> None:
    np.savez(path, x=data.x, y=data.y)


def load_npz(path) -> Dataset:
    with np.load(path) as f:
        return Dataset(f["x"], f["y"])


def split(data: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Class-stratified train/test split."""
    rng = np.random.default_rng(seed)
    test = []
    per_class = n_test // data.classes
    for k in range(data.classes):
        idx = np.flatnonzero(data.y == k)
        test.extend(rng.choice(idx, size=min(per_class, len(idx)), replace=False))
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(data)), test)
    return data.take(rng.permutation(train)), data.take(rng.permutation(test))


def mnist5k(out_dir, seed: int = 0, n_test: int = 1000) -> dict[str, Path]:
    """Write the 5,000-sample MNIST subset shipped with mlxtend as IDX files."""
    from mlxtend.data import mnist_data

    x, y = mnist_data()
    full = Dataset(x.reshape(-1, 28, 28), y.astype(np.int64))
    train, test = split(full, n_test, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, part in (("train", train), ("test", test)):
        paths[f"{name}_images"] = out / f"{name}-images-idx3-ubyte.gz"
        paths[f"{name}_labels"] = out / f"{name}-labels-idx1-ubyte.gz"
        write_idx(paths[f"{name}_images"], part.x)
        write_idx(paths[f"{name}_labels"], part.y)
    return paths
