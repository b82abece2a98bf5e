"""
Dataset utilities: IDX parsing, seeded batching and input masking
"""
import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Tuple, Union

import numpy as np

from .errors import ConfigurationError, ConsistencyError, FormatError
from .tensor import Tensor

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
MNIST_COUNTS = {"train": 60000, "test": 10000}
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Dataset:
    images: Tensor        # [n, 1, rows, cols], values in [0, 1]
    labels: np.ndarray    # [n] int64
    split: str = "train"

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, n: int, offset: int = 0) -> "Dataset":
        """First `n` samples after `offset` (a fixed evaluation subset)"""
        sl = slice(offset, offset + n)
        return Dataset(Tensor(self.images.data[sl]), self.labels[sl], self.split)


@dataclass(frozen=True)
class MaskSpec:
    """Rectangle (row0, col0, height, width) in pixel coordinates"""

    row0: int = 0
    col0: int = 0
    height: int = 9
    width: int = 28
    fill: float = 0.0

    def check(self, rows: int, cols: int) -> None:
        if min(self.row0, self.col0, self.height, self.width) < 0 \
                or self.row0 + self.height > rows or self.col0 + self.width > cols:
            raise ConfigurationError(
                f"mask ({self.row0}, {self.col0}, {self.height}, {self.width}) outside {rows}x{cols} image"
            )

    def region(self, rows: int, cols: int) -> np.ndarray:
        """Boolean [rows, cols] array marking masked pixels"""
        self.check(rows, cols)
        mask = np.zeros((rows, cols), dtype=bool)
        mask[self.row0:self.row0 + self.height, self.col0:self.col0 + self.width] = True
        return mask


def _read(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, expected_magic: int, path: Path) -> Tuple[Tuple[int, ...], np.ndarray]:
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != expected_magic:
        raise FormatError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    size = int(np.prod(dims))
    if len(raw) != header_len + size:
        raise FormatError(f"{path}: expected {size} data bytes, found {len(raw) - header_len}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)
    logger.debug(f"Parsed {path.name}: magic {magic}, count {count}, dims {dims}")
    return dims, data


def load_idx(images_path: PathLike, labels_path: PathLike, split: str = "train") -> Dataset:
    """Decode a big-endian IDX image/label pair; pixels are scaled by 1/255"""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_dims, pixels = _parse_idx(_read(images_path), IMAGE_MAGIC, images_path)
    lab_dims, labels = _parse_idx(_read(labels_path), LABEL_MAGIC, labels_path)
    if img_dims[0] != lab_dims[0]:
        raise ConsistencyError(f"{img_dims[0]} images but {lab_dims[0]} labels")
    images = (pixels.astype(np.float32) / np.float32(255.0)).reshape(img_dims[0], 1, img_dims[1], img_dims[2])
    return Dataset(Tensor(images), labels.astype(np.int64), split)


def resolve_split_paths(data_dir: PathLike, split: str) -> Tuple[Path, Path]:
    """Locate the image/label files of a split, plain or gzipped"""
    data_dir = Path(data_dir)
    found = []
    for name in MNIST_FILES[split]:
        for candidate in (data_dir / name, data_dir / f"{name}.gz"):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            raise ConfigurationError(f"missing {name} under {data_dir}")
    return found[0], found[1]


def load_mnist(data_dir: PathLike, split: str = "train", check_counts: bool = True) -> Dataset:
    """Load an MNIST or Fashion-MNIST split (both share the IDX layout)"""
    if split not in MNIST_FILES:
        raise ConfigurationError(f"split must be train or test, got {split!r}")
    images_path, labels_path = resolve_split_paths(data_dir, split)
    logger.info(f"📂 Loading {split} split from {images_path.parent}")
    dataset = load_idx(images_path, labels_path, split)
    if check_counts and len(dataset) != MNIST_COUNTS[split]:
        raise ConsistencyError(f"{split} split has {len(dataset)} samples, expected {MNIST_COUNTS[split]}")
    if len(dataset) and (dataset.labels.min() < 0 or dataset.labels.max() > 9):
        raise FormatError(f"labels outside [0, 9] in {labels_path}")
    logger.info(f"   ✅ {len(dataset):,} images loaded")
    return dataset


def shuffled_order(n: int, seed: int, epoch: int = 0) -> np.ndarray:
    """Fisher-Yates permutation seeded by (seed, epoch)"""
    rng = np.random.default_rng([seed, epoch])
    order = np.arange(n)
    if n < 2:
        return order
    swaps = rng.integers(0, np.arange(n, 1, -1))
    for i, j in zip(range(n - 1, 0, -1), swaps.tolist()):
        order[i], order[j] = order[j], order[i]
    return order


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0) -> Iterator[Tuple[Tensor, np.ndarray]]:
    """One shuffled epoch of (images, labels); the final short batch is kept"""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = shuffled_order(len(dataset), seed, epoch)
    images = dataset.images.data
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Tensor(images[idx]), dataset.labels[idx]


def batch_stream(dataset: Dataset, batch_size: int, seed: int) -> Iterator[Tuple[Tensor, np.ndarray]]:
    """Endless sequence of epochs"""
    if len(dataset) == 0:
        raise ConfigurationError("dataset is empty")
    epoch = 0
    while True:
        yield from batches(dataset, batch_size, seed, epoch)
        epoch += 1


def apply_mask(images, mask_spec: MaskSpec) -> Tensor:
    """Set the masked rectangle to `fill`; every other pixel is untouched"""
    arr = np.array(images.data if isinstance(images, Tensor) else images, dtype=np.float32)
    region = mask_spec.region(arr.shape[-2], arr.shape[-1])
    arr[..., region] = np.float32(mask_spec.fill)
    return Tensor(arr)
