"""Image-classification datasets in their canonical binary formats.

MNIST-style IDX files and CIFAR-10 binary batches are parsed directly.
Pixels stay as ``uint8`` in memory and are normalised per batch, using
per-channel statistics computed on the training split.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rng import stream

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 3073
_MAX_ITEMS = 1 << 31

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
DATASET_DIRS = {"mnist": "mnist", "fashion_mnist": "fashion-mnist",
                "cifar10": "cifar-10-batches-bin"}


class DataFormatError(ValueError):
    pass


def data_root(root=None) -> Path:
    """Explicit ``root``, else ``$SSC_DATA_DIR``, else ``./data``."""
    return Path(root or os.environ.get("SSC_DATA_DIR") or "data")


def _sha256(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def load_idx(path) -> np.ndarray:
    """Parse an IDX image (0x803) or label (0x801) file into a uint8 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise DataFormatError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES:
        if len(raw) < 16:
            raise DataFormatError(f"{path}: truncated image header")
        n, rows, cols = struct.unpack(">III", raw[4:16])
        shape, off = (n, rows, cols), 16
    elif magic == IDX_LABELS:
        (n,) = struct.unpack(">I", raw[4:8])
        shape, off = (n,), 8
    else:
        raise DataFormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    count = int(np.prod(shape, dtype=np.int64))
    if any(d >= _MAX_ITEMS for d in shape) or count >= _MAX_ITEMS:
        raise DataFormatError(f"{path}: dimension overflow {shape}")
    if len(raw) - off != count:
        raise DataFormatError(
            f"{path}: payload has {len(raw) - off} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(shape).copy()


@dataclass(frozen=True, eq=False)
class Dataset:
    """Raw pixels ``(n, C, H, W)`` uint8 plus labels and normalisation stats."""

    name: str
    split: str
    pixels: np.ndarray
    labels: np.ndarray
    num_classes: int
    checksum: str
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 4 or self.pixels.dtype != np.uint8:
            raise DataFormatError("pixels must be a uint8 (n, C, H, W) array")
        if len(self.pixels) != len(self.labels):
            raise DataFormatError(
                f"{len(self.pixels)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(f"labels outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])

    def normalized(self, idx=None, dtype=np.float32) -> np.ndarray:
        px = self.pixels if idx is None else self.pixels[idx]
        x = px.astype(dtype) / dtype(255)
        x -= self.mean.astype(dtype)[None, :, None, None]
        x /= self.std.astype(dtype)[None, :, None, None]
        return x

    def with_stats(self, mean, std) -> "Dataset":
        return replace(self, mean=np.asarray(mean, np.float64), std=np.asarray(std, np.float64))

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, pixels=self.pixels[idx], labels=self.labels[idx])


def channel_stats(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of ``pixels / 255``."""
    C = pixels.shape[1]
    mean, std = np.empty(C), np.empty(C)
    for c in range(C):
        v = pixels[:, c].astype(np.float64) / 255.0
        mean[c] = v.mean()
        std[c] = v.std()
    std[std == 0] = 1.0
    return mean, std


def _make(name, split, pixels, labels, num_classes, checksum, stats=None):
    labels = labels.astype(np.int64)
    mean, std = stats if stats is not None else channel_stats(pixels)
    return Dataset(name, split, pixels, labels, num_classes, checksum, mean, std)


def load_idx_pair(images_path, labels_path, name="idx", split="train", stats=None) -> Dataset:
    imgs = load_idx(images_path)
    labels = load_idx(labels_path)
    if imgs.ndim != 3 or labels.ndim != 1:
        raise DataFormatError("expected an image file and a label file")
    return _make(name, split, imgs[:, None], labels, 10,
                 _sha256([images_path, labels_path]), stats)


def load_cifar10_files(paths, name="cifar10", split="train", stats=None) -> Dataset:
    chunks = []
    for p in paths:
        raw = np.fromfile(p, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            raise DataFormatError(f"{p}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
        chunks.append(raw.reshape(-1, CIFAR_RECORD))
    rec = np.concatenate(chunks)
    labels = rec[:, 0]
    if labels.max() >= 10:
        raise DataFormatError(f"label {labels.max()} >= 10 in CIFAR-10 data")
    pixels = np.ascontiguousarray(rec[:, 1:].reshape(-1, 3, 32, 32))
    return _make(name, split, pixels, labels, 10, _sha256(paths), stats)


def load_mnist(root=None, split="train", stats=None, name="mnist") -> Dataset:
    d = data_root(root) / DATASET_DIRS[name]
    img, lab = MNIST_FILES[split]
    return load_idx_pair(d / img, d / lab, name, split, stats)


def load_cifar10(root=None, split="train", stats=None) -> Dataset:
    d = data_root(root) / DATASET_DIRS["cifar10"]
    return load_cifar10_files([d / f for f in CIFAR_FILES[split]], "cifar10", split, stats)


def load_dataset(name: str, root=None) -> tuple[Dataset, Dataset]:
    """``(train, test)``; the test split reuses the train split's statistics."""
    if name in ("mnist", "fashion_mnist"):
        train = load_mnist(root, "train", name=name)
        test = load_mnist(root, "test", (train.mean, train.std), name=name)
    elif name == "cifar10":
        train = load_cifar10(root, "train")
        test = load_cifar10(root, "test", (train.mean, train.std))
    else:
        raise ValueError(f"unknown dataset {name!r}; have {sorted(DATASET_DIRS)}")
    return train, test


def subsample_indices(ds: Dataset, fraction: float, seed: int) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return np.arange(len(ds))
    rng = stream(seed, "subsample")
    keep = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) == 0:
            continue
        k = int(np.floor(len(idx) * fraction + 0.5))
        if k == 0:
            raise ValueError(f"fraction {fraction} leaves class {c} without samples")
        keep.append(rng.choice(idx, size=k, replace=False))
    return np.sort(np.concatenate(keep))


def subsample(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Stratified per-class subset, deterministic in ``seed``."""
    if fraction == 1:
        return ds
    return ds.take(subsample_indices(ds, fraction, seed))


def filter_classes(ds: Dataset, classes) -> Dataset:
    """Keep ``classes`` and relabel them ``0..k-1`` in list order."""
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ValueError(f"duplicate class in {classes}")
    for c in classes:
        if not 0 <= c < ds.num_classes:
            raise ValueError(f"unknown class {c} (dataset has {ds.num_classes})")
    lut = np.full(ds.num_classes, -1, dtype=np.int64)
    lut[classes] = np.arange(len(classes))
    keep = np.flatnonzero(lut[ds.labels] >= 0)
    return replace(ds, pixels=ds.pixels[keep], labels=lut[ds.labels[keep]],
                   num_classes=len(classes))


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return stream(seed, "shuffle", epoch).permutation(n)


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop from a zero-padded image plus random horizontal flip."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, B)
    dx = rng.integers(0, 2 * pad + 1, B)
    flip = rng.random(B) < 0.5
    out = np.empty_like(x)
    for i in range(B):
        crop = xp[i, :, dy[i]:dy[i] + H, dx[i]:dx[i] + W]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def batches(ds: Dataset, batch_size: int, seed: int = 0, epoch: int = 0,
            shuffle: bool = True, augment: bool = False, dtype=np.float32):
    """Yield ``(x, y)`` covering every sample once; the last batch may be short.

    The order is a pure function of ``(seed, epoch)``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_order(len(ds), seed, epoch, shuffle)
    rng = stream(seed, "augment", epoch) if augment else None
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        x = ds.normalized(idx, dtype)
        if rng is not None:
            x = augment_batch(x, rng)
        yield x, ds.labels[idx]
