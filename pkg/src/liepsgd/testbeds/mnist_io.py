"""Bit-exact IDX file parsing (the MNIST distribution format).

Images: big-endian magic 0x00000803, count, rows, cols, then raw bytes.
Labels: big-endian magic 0x00000801, count, then raw bytes in 0..9.
Pixel values are scaled to [0, 1].
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import IdxFormatError
from .logreg import ImageDataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATA_DIR_ENV = "PSGD_DATA_DIR"

_TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
_TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxFormatError(f"truncated IDX file: expected {count} bytes of {what}, got {len(data)}")
    return data


def load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(f"bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
        raw = _read_exact(f, count * rows * cols, "pixels")
        if f.read(1):
            raise IdxFormatError("trailing bytes after declared image data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(f"bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
        raw = _read_exact(f, count, "labels")
        if f.read(1):
            raise IdxFormatError("trailing bytes after declared label data")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.intp)
    if labels.size and labels.max() > 9:
        raise IdxFormatError(f"label {labels.max()} outside 0..9")
    return labels


def mnist_load(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"image/label count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return images, labels


def resolve_data_dir(data_dir: str | None = None) -> Path | None:
    if data_dir is not None:
        return Path(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else None


def load_mnist_dataset(data_dir: str | None = None) -> ImageDataset | None:
    """Full train/test dataset if all four IDX files exist, else None."""
    root = resolve_data_dir(data_dir)
    if root is None:
        return None
    paths = [root / name for name in (*_TRAIN_FILES, *_TEST_FILES)]
    if not all(p.exists() for p in paths):
        return None
    train_x, train_y = mnist_load(paths[0], paths[1])
    test_x, test_y = mnist_load(paths[2], paths[3])
    return ImageDataset(train_x, train_y, test_x, test_y)
