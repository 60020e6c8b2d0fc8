import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import (
    DatasetCountError,
    DatasetError,
    DatasetFileMissingError,
    DatasetLabelError,
    DatasetTruncatedError,
    EmptyDatasetError,
    ShapeMismatchError,
)
from .models import DatasetSection

logger = logging.getLogger(__name__)

CIFAR10_CLASSES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]
CIFAR10_SHAPE = (3, 32, 32)
CIFAR10_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR10_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
CIFAR10_COUNTS = {"train": 50000, "test": 10000}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images in [0, 1] with shape (N, C, H, W) and one integer label per image."""

    images: np.ndarray
    labels: np.ndarray
    class_names: Optional[List[str]] = None
    split: str = "test"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images but {len(self.labels)} labels")
        # read-only private copies
        for name in ("images", "labels"):
            array = np.array(getattr(self, name), copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.labels.max()) + 1 if len(self) else 0

    def head(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n], self.class_names, self.split)

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels, self.class_names, self.split)

    def batches(self, batch_size: int) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (indices, images, labels) in dataset order."""
        for start in range(0, len(self), batch_size):
            index = np.arange(start, min(start + batch_size, len(self)))
            yield index, self.images[index], self.labels[index]


def _read_records(path: Path, dtype) -> Tuple[np.ndarray, np.ndarray]:
    if not path.is_file():
        raise DatasetFileMissingError(f"CIFAR-10 file not found: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR10_RECORD_BYTES:
        raise DatasetTruncatedError(
            f"{path}: {raw.size} bytes is not a whole number of {CIFAR10_RECORD_BYTES}-byte records")
    records = raw.reshape(-1, CIFAR10_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= len(CIFAR10_CLASSES))
    if bad.size:
        raise DatasetLabelError(f"{path}: record {bad[0]} has label byte {labels[bad[0]]} (expected < 10)")
    # channel-planar R, G, B; each plane row-major 32x32
    images = records[:, 1:].reshape((-1,) + CIFAR10_SHAPE).astype(dtype) / dtype(255)
    return images.astype(dtype, copy=False), labels


def _class_names(directory: Path) -> List[str]:
    meta = directory / "batches.meta.txt"
    if meta.is_file():
        names = [line.strip() for line in meta.read_text().splitlines() if line.strip()]
        if len(names) == len(CIFAR10_CLASSES):
            return names
    return list(CIFAR10_CLASSES)


def load_cifar10(path: Union[str, Path], split: str = "test", dtype=np.float32) -> Dataset:
    """
    Load CIFAR-10 from the official binary format.

    ``path`` is either one batch file or a directory holding the split's
    batch files (``cifar-10-batches-bin`` is searched one level down). When a
    whole split is loaded from a directory its sample count is verified.
    """
    path = Path(path)
    dtype = np.dtype(dtype).type
    if split not in CIFAR10_FILES:
        raise DatasetError(f"unknown split {split!r}; expected 'train' or 'test'")
    if path.is_file():
        images, labels = _read_records(path, dtype)
        return Dataset(images, labels, _class_names(path.parent), split)
    if not path.is_dir():
        raise DatasetFileMissingError(f"CIFAR-10 path not found: {path}")
    if not (path / CIFAR10_FILES[split][0]).exists() and (path / "cifar-10-batches-bin").is_dir():
        path = path / "cifar-10-batches-bin"
    parts = [_read_records(path / name, dtype) for name in CIFAR10_FILES[split]]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if len(labels) != CIFAR10_COUNTS[split]:
        raise DatasetCountError(f"{split} split has {len(labels)} samples, expected {CIFAR10_COUNTS[split]}")
    logger.info("Loaded CIFAR-10 %s split from %s (%d samples)", split, path, len(labels))
    return Dataset(images, labels, _class_names(path), split)


def synthetic_dataset(seed: int, n: int, num_classes: int, shape: Sequence[int] = CIFAR10_SHAPE,
                      noise: float = 0.1, dtype=np.float32, split: str = "synthetic") -> Dataset:
    """
    Deterministic, class-separable Gaussian blobs in [0, 1].

    Every class gets a random prototype image in [0.2, 0.8]; samples are the
    prototype plus isotropic Gaussian noise, clipped to [0, 1]. Labels are
    balanced (``n // num_classes`` per class, remainder to the lowest classes)
    and shuffled.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeMismatchError("synthetic images need a (channels, height, width) shape", actual=shape)
    if num_classes < 2:
        raise DatasetError("synthetic datasets need at least two classes")
    if n < num_classes:
        raise EmptyDatasetError(f"n={n} cannot cover {num_classes} classes")
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.2, 0.8, size=(num_classes,) + shape)
    labels = rng.permutation(np.arange(n) % num_classes)
    images = prototypes[labels] + rng.normal(0.0, noise, size=(n,) + shape)
    images = np.clip(images, 0.0, 1.0).astype(dtype)
    return Dataset(images, labels.astype(np.int64), [f"class_{i}" for i in range(num_classes)], split)


def build_dataset(section: DatasetSection, dtype=np.float32) -> Dataset:
    """Dataset described by a run-config section, truncated to ``limit`` samples."""
    if section.kind == "cifar10":
        dataset = load_cifar10(section.path, section.split, dtype=dtype)
    else:
        dataset = synthetic_dataset(section.seed, section.n, section.num_classes, section.shape, dtype=dtype)
    if section.limit is not None:
        dataset = dataset.head(section.limit)
    return dataset
