import struct
from pathlib import Path

import numpy as np
import pytest

from src.core.data_processor import IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, Dataset
from src.core.tensor import Tensor


def write_idx_images(path: Path, pixels: np.ndarray):
    n, rows, cols = pixels.shape
    path.write_bytes(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray):
    path.write_bytes(struct.pack(">II", LABEL_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes())


def synthetic_digits(n: int, seed: int, size: int = 28) -> tuple:
    """Blocky class-dependent patterns with a little noise, as uint8 pixels"""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    pixels = rng.integers(0, 30, size=(n, size, size))
    band = size // 10
    for i, label in enumerate(labels):
        pixels[i, :, label * band:(label + 1) * band + band] = 230
    return pixels.astype(np.uint8), labels


@pytest.fixture
def mnist_dir(tmp_path) -> Path:
    """Directory with small train/test IDX splits laid out like MNIST"""
    root = tmp_path / "mnist"
    root.mkdir()
    for split, n, seed in (("train", 60, 1), ("test", 30, 2)):
        pixels, labels = synthetic_digits(n, seed)
        images_name, labels_name = MNIST_FILES[split]
        write_idx_images(root / images_name, pixels)
        write_idx_labels(root / labels_name, labels)
    return root


@pytest.fixture
def tiny_dataset() -> Dataset:
    pixels, labels = synthetic_digits(40, seed=3)
    return Dataset(Tensor(pixels.reshape(40, 1, 28, 28) / 255.0), labels.astype(np.int64), "test")
