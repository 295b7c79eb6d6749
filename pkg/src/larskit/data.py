"""Datasets: seeded Gaussian class blobs and IDX (MNIST-style) files."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nd
from .errors import FormatError, InvalidArgument
from .nn import Batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class BlobParams:
    classes: int = 10
    dim: int = 32
    train_per_class: int = 1000
    test_per_class: int = 200
    separation: float = 3.0
    spread: float = 1.0

    def validate(self):
        if self.classes < 2:
            raise InvalidArgument(f"need at least 2 classes, got {self.classes}")
        if self.dim < 1:
            raise InvalidArgument(f"dim must be >= 1, got {self.dim}")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise InvalidArgument("per-class train/test counts must be >= 1")
        if self.separation < 0 or self.spread < 0:
            raise InvalidArgument("separation and spread must be non-negative")


def make_synthetic(params: BlobParams, rng: nd.Rng):
    """Gaussian blobs around random class centres; returns ``(train, test)``.

    Centres sit at distance ``separation`` from the origin along random
    directions; samples add isotropic noise of std ``spread``. Train and test
    samples are separate draws, shuffled independently.
    """
    params.validate()
    C, d = params.classes, params.dim
    dirs = rng.normal((C, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centres = params.separation * dirs

    def draw(per_class):
        labels = np.repeat(np.arange(C), per_class)
        x = centres[labels] + nd.gaussian(rng, (len(labels), d), 0.0, params.spread)
        order = rng.permutation(len(labels))
        return Batch(x[order], labels[order])

    train = draw(params.train_per_class)
    test = draw(params.test_per_class)
    return train, test


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, what):
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated {what} header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} for {what}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise FormatError(f"{path}: truncated {what} header")
    dims = struct.unpack(f">{ndim}I", raw[4:hdr])
    n = int(np.prod(dims))
    if len(raw) - hdr < n:
        raise FormatError(f"{path}: truncated {what} payload ({len(raw) - hdr} of {n} bytes)")
    if len(raw) - hdr > n:
        raise FormatError(f"{path}: {len(raw) - hdr - n} trailing bytes after {what} payload")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path) -> Batch:
    """Read an IDX image/label file pair; pixels scaled to [0, 1], images flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Batch(x, labels.astype(np.int64))


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise InvalidArgument("images must be [n, rows, cols]")
    Path(path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def subset(ds: Batch, n: int) -> Batch:
    """The first ``n`` samples (or all, if fewer)."""
    n = min(n, len(ds))
    return Batch(ds.inputs[:n], ds.labels[:n])
