"""Datasets: MNIST IDX parsing and synthetic generators."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
GZIP_MAGIC = b"\x1f\x8b"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxError(ValueError):
    """Base class for IDX parse failures."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    train_x: np.ndarray
    train_labels: np.ndarray
    test_x: np.ndarray
    test_labels: np.ndarray
    class_count: int

    def __post_init__(self):
        for x, y, part in (
            (self.train_x, self.train_labels, "train"),
            (self.test_x, self.test_labels, "test"),
        ):
            if x.shape[0] != y.shape[0]:
                raise ValueError(f"{part}: {x.shape[0]} rows but {y.shape[0]} labels")
            if y.size and (y.min() < 0 or y.max() >= self.class_count):
                raise ValueError(f"{part}: labels outside [0, {self.class_count})")

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        raw = gzip.decompress(raw)
    return raw


def _parse_header(raw: bytes, expected_magic: int, ndims: int, path) -> tuple[int, ...]:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes is shorter than the IDX magic")
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    header_len = 4 + 4 * ndims
    if len(raw) < header_len:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes is shorter than the IDX header")
    dims = struct.unpack(f">{ndims}i", raw[4:header_len])
    need = header_len + int(np.prod(dims))
    if len(raw) < need:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes, header promises {need}")
    return dims


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 images of shape ``(count, rows, cols)``."""
    raw = _read_bytes(path)
    dims = _parse_header(raw, IMAGE_MAGIC, 3, path)
    return np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=16).reshape(dims)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    (count,) = _parse_header(raw, LABEL_MAGIC, 1, path)
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)


def load_mnist_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label file pair.

    Returns float64 rows of ``rows*cols`` pixels scaled into [0, 1] and an
    int64 label vector. Gzip-compressed files are detected by magic bytes.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4i", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2i", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def load_mnist(directory) -> Dataset:
    """Load the four standard MNIST files from ``directory``."""
    directory = Path(directory)
    parts = {}
    for split, (img, lab) in MNIST_FILES.items():
        parts[split] = load_mnist_idx(_find(directory, img), _find(directory, lab))
    return Dataset(
        train_x=parts["train"][0],
        train_labels=parts["train"][1],
        test_x=parts["test"][0],
        test_labels=parts["test"][1],
        class_count=10,
    )


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams stay reproducible if generation is split up.
    return np.random.Generator(np.random.Philox(seed))


def gen_gaussian_pair(n: int, rho: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Standard bivariate Gaussian sample with correlation ``rho``.

    Analytic MI is ``-0.5 * ln(1 - rho**2)`` nats.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError("rho must lie in (-1, 1)")
    rng = _rng(seed)
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    y = rho * x + np.sqrt(1.0 - rho * rho) * z
    return x[:, None], y[:, None]


def _distinct_vertices(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    if dim <= 20:
        codes = rng.choice(2**dim, size=count, replace=False)
        return ((codes[:, None] >> np.arange(dim)[None, :]) & 1).astype(np.float64)
    seen, rows = set(), []
    while len(rows) < count:
        row = rng.integers(0, 2, dim)
        if row.tobytes() not in seen:
            seen.add(row.tobytes())
            rows.append(row)
    return np.array(rows, dtype=np.float64)


def gen_blobs(
    n_per_class: int,
    class_count: int,
    dim: int,
    separation: float,
    seed: int = 0,
    train_fraction: float = 0.8,
) -> Dataset:
    """Isotropic unit-variance Gaussian blobs, one per class.

    Class centres are distinct hypercube vertices, chosen at random and scaled
    by ``separation``, so class information is spread over all coordinates.
    All features are then rescaled by one global affine map into [0, 1],
    which keeps the geometry isotropic. Each class is split 80/20 into
    train/test.
    """
    if class_count < 2 or class_count > 2**dim:
        raise ValueError(f"need 2 <= class_count <= 2**dim, got {class_count} classes in {dim} dims")
    rng = _rng(seed)
    centers = separation * _distinct_vertices(rng, class_count, dim)

    x = centers.repeat(n_per_class, axis=0) + rng.standard_normal((class_count * n_per_class, dim))
    labels = np.arange(class_count).repeat(n_per_class)
    lo, hi = x.min(), x.max()
    x = (x - lo) / (hi - lo)

    n_train = int(round(train_fraction * n_per_class))
    within = np.tile(np.arange(n_per_class), class_count)
    train = within < n_train
    order = rng.permutation(int(train.sum()))
    return Dataset(
        train_x=x[train][order],
        train_labels=labels[train][order],
        test_x=x[~train],
        test_labels=labels[~train],
        class_count=class_count,
    )
