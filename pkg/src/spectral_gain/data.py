"""Dataset parsing, preprocessing, and deterministic batching.

Byte layouts (see docs/file-formats.md):
  - MNIST IDX, big-endian: images start with magic 2051 then count/rows/cols
    as uint32, labels with magic 2049 then count; pixels and labels are
    unsigned bytes.  Gzip-compressed files (the official distribution form)
    are accepted transparently.
  - CIFAR-10 binary: concatenated 3073-byte records, one label byte followed
    by 3072 pixel bytes stored channel-planar (1024 red, 1024 green, 1024
    blue), each plane row-major 32x32.

Images are kept on the raw 0..255 scale; preprocessing subtracts a per-pixel
mean image computed from the training split.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataFormatError

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray          # (h, w, c, n) float64
    labels: np.ndarray          # (n,) int64 in [0, 10)
    mean_image: np.ndarray | None = None
    split: str = ""

    @property
    def size(self) -> int:
        return self.images.shape[3]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[:3]

    def example(self, i: int) -> tuple[np.ndarray, int]:
        return self.images[:, :, :, i], int(self.labels[i])


def _read_binary(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def load_mnist(images_path, labels_path, split: str = "") -> Dataset:
    """Parse an MNIST IDX image/label file pair."""
    img_raw = _read_binary(images_path)
    if len(img_raw) < 16:
        raise DataFormatError(f"{images_path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != MNIST_IMAGE_MAGIC:
        raise DataFormatError(f"{images_path}: bad image magic {magic} (want {MNIST_IMAGE_MAGIC})")
    if len(img_raw) != 16 + count * rows * cols:
        raise DataFormatError(
            f"{images_path}: payload is {len(img_raw) - 16} bytes, "
            f"header declares {count}x{rows}x{cols}"
        )
    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16)
    stacked = pixels.reshape(count, rows, cols).astype(np.float64)
    images = np.ascontiguousarray(np.moveaxis(stacked, 0, 2)[:, :, np.newaxis, :])

    lbl_raw = _read_binary(labels_path)
    if len(lbl_raw) < 8:
        raise DataFormatError(f"{labels_path}: truncated IDX header")
    lmagic, lcount = struct.unpack(">II", lbl_raw[:8])
    if lmagic != MNIST_LABEL_MAGIC:
        raise DataFormatError(f"{labels_path}: bad label magic {lmagic} (want {MNIST_LABEL_MAGIC})")
    if len(lbl_raw) != 8 + lcount:
        raise DataFormatError(f"{labels_path}: payload is {len(lbl_raw) - 8} bytes for {lcount} labels")
    if lcount != count:
        raise DataFormatError(f"image count {count} != label count {lcount}")
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{labels_path}: label {labels.max()} out of range")
    return Dataset(images=images, labels=labels, split=split)


def load_cifar10(batch_paths, split: str = "") -> Dataset:
    """Parse one or more CIFAR-10 binary batch files."""
    parts_img, parts_lbl = [], []
    for path in batch_paths:
        raw = _read_binary(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if labels.max() > 9:
            raise DataFormatError(f"{path}: label {labels.max()} out of range")
        planes = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
        parts_img.append(np.transpose(planes, (2, 3, 1, 0)))  # (h, w, c, n)
        parts_lbl.append(labels)
    if not parts_img:
        raise DataFormatError("no CIFAR batch files given")
    return Dataset(
        images=np.ascontiguousarray(np.concatenate(parts_img, axis=3)),
        labels=np.concatenate(parts_lbl),
        split=split,
    )


def mean_image(ds: Dataset) -> np.ndarray:
    """Per-pixel mean over all examples (compute on the training split only)."""
    return ds.images.mean(axis=3)


def preprocess(ds: Dataset, mean: np.ndarray) -> Dataset:
    """Subtract the mean image from every example; no rescaling."""
    if mean.shape != ds.image_shape:
        raise DataFormatError(f"mean image shape {mean.shape} != images {ds.image_shape}")
    return replace(ds, images=ds.images - mean[:, :, :, np.newaxis], mean_image=mean)


def take(ds: Dataset, indices) -> Dataset:
    idx = np.asarray(indices)
    return replace(ds, images=np.ascontiguousarray(ds.images[:, :, :, idx]),
                   labels=ds.labels[idx])


def shuffled_batches(
    ds: Dataset, batch_size: int, seed: int, epoch: int
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches in an order fixed by (seed, epoch).

    The permutation is a pure function of the pair; the final short batch is
    kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng([int(seed), int(epoch)])
    order = rng.permutation(ds.size)
    for start in range(0, ds.size, batch_size):
        idx = order[start:start + batch_size]
        yield np.ascontiguousarray(ds.images[:, :, :, idx]), ds.labels[idx]


# ---------------------------------------------------------------------------
# dataset directory resolution


def resolve_mnist(root) -> tuple[Dataset, Dataset]:
    """Load train/validation MNIST from a directory of (optionally gzipped) IDX files."""
    root = Path(root)

    def find(stem: str) -> Path:
        for name in (stem, stem + ".gz"):
            p = root / name
            if p.exists():
                return p
        raise DataFormatError(f"missing {stem}[.gz] under {root}")

    train = load_mnist(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte"), "train")
    val = load_mnist(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte"), "validation")
    return train, val


def resolve_cifar10(root) -> tuple[Dataset, Dataset]:
    """Load train/validation CIFAR-10 from a directory of binary batches."""
    root = Path(root)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"

    def find(name: str) -> Path:
        for cand in (name, name + ".gz"):
            p = root / cand
            if p.exists():
                return p
        raise DataFormatError(f"missing {name}[.gz] under {root}")

    train_paths = [find(f"data_batch_{i}.bin") for i in range(1, 6)]
    train = load_cifar10(train_paths, "train")
    val = load_cifar10([find("test_batch.bin")], "validation")
    return train, val


# ---------------------------------------------------------------------------
# tiny PNM reader for demo probe images


def read_pnm(path) -> np.ndarray:
    """Read a binary P5 (grayscale) or P6 (RGB) image as an (h, w, c) tensor."""
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise DataFormatError(f"{path}: only binary P5/P6 PNM supported")
    channels = 1 if raw[:2] == b"P5" else 3

    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(raw):
            raise DataFormatError(f"{path}: truncated PNM header")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(int(raw[pos:end]))
            pos = end
    width, height, maxval = tokens
    if maxval > 255:
        raise DataFormatError(f"{path}: 16-bit PNM not supported")
    pos += 1  # single whitespace after maxval
    need = width * height * channels
    if len(raw) - pos < need:
        raise DataFormatError(f"{path}: truncated pixel payload")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=pos, count=need)
    return pixels.reshape(height, width, channels).astype(np.float64)
