"""Dataset ingestion: IDX, CIFAR-10 binary, and seeded synthetic blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .netcore import DTYPE

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    def __init__(self, path, offset: int, msg: str):
        super().__init__(f"{path}: byte {offset}: {msg}")
        self.path = path
        self.offset = offset


@dataclass
class Dataset:
    inputs: np.ndarray  # (N, C, H, W) or (N, D), float64 in [0, 1] for image data
    labels: np.ndarray  # (N,), int64

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx])

    def split(self, test_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        order = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(order[n_test:])), self.subset(np.sort(order[:n_test]))


def read_idx(path) -> np.ndarray:
    """Parse an IDX file into an array of its stored dtype and shape."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise DataFormatError(path, len(raw), "truncated magic")
    zero, code, ndim = struct.unpack_from(">HBB", raw, 0)
    if zero != 0 or code not in IDX_DTYPES or ndim == 0:
        raise DataFormatError(path, 0, f"bad magic 0x{raw[:4].hex()}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError(path, len(raw), f"truncated header, need {header_end} bytes")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dtype = IDX_DTYPES[code]
    expected = header_end + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise DataFormatError(path, min(len(raw), expected), f"payload size {len(raw) - header_end}, expected {expected - header_end}")
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    for code, dt in IDX_DTYPES.items():
        if dt.kind == array.dtype.kind and dt.itemsize == array.dtype.itemsize:
            break
    else:
        raise TypeError(f"no IDX code for dtype {array.dtype}")
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(dt).tobytes())


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Images ``(N, rows, cols)`` become ``(N, 1, rows, cols)`` scaled to [0, 1]."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise DataFormatError(labels_path, 3, f"labels must be 1-D, got {labels.ndim} dims")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(labels_path, 4, f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.astype(DTYPE)
    if images.dtype.kind == "u" and images.dtype.itemsize == 1:
        x /= 255.0
    if x.ndim == 3:
        x = x[:, None]
    return Dataset(x, labels.astype(np.int64))


def load_cifar10_bin(paths: Sequence) -> Dataset:
    """Concatenate CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record)."""
    xs, ys = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            raise DataFormatError(path, len(raw) - len(raw) % CIFAR_RECORD,
                                  f"length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if rec.size and rec[:, 0].max() > 9:
            bad = int(np.argmax(rec[:, 0] > 9))
            raise DataFormatError(path, bad * CIFAR_RECORD, f"label {rec[bad, 0]} out of range")
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(DTYPE) / 255.0)
    if not xs:
        return Dataset(np.zeros((0, 3, 32, 32), dtype=DTYPE), np.zeros(0, dtype=np.int64))
    return Dataset(np.concatenate(xs), np.concatenate(ys))


def write_cifar10_bin(path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    Path(path).write_bytes(rec.tobytes())


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    per_class: int = 100
    shape: tuple[int, ...] = (1, 28, 28)
    margin: float = 4.0
    noise: float = 1.0
    modes_per_class: int = 1


def synthetic_dataset(spec: SyntheticSpec, seed: int) -> Dataset:
    """Gaussian blobs, one isotropic cluster per class mode.

    Class centres are drawn on a sphere of radius ``margin / sqrt(2)`` in a
    random direction, so two centres sit about ``margin`` apart, measured in
    units of the per-coordinate ``noise``. With ``modes_per_class > 1`` each
    class is a mixture, which is generally not linearly separable.
    """
    rng = np.random.default_rng(seed)
    dim = int(np.prod(spec.shape))
    n_centres = spec.num_classes * spec.modes_per_class
    dirs = rng.standard_normal((n_centres, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centres = dirs * (spec.margin * spec.noise / np.sqrt(2.0))

    n = spec.num_classes * spec.per_class
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
    modes = rng.integers(0, spec.modes_per_class, size=n)
    x = centres[labels * spec.modes_per_class + modes] + spec.noise * rng.standard_normal((n, dim))
    order = rng.permutation(n)
    return Dataset(x[order].reshape((n, *spec.shape)).astype(DTYPE), labels[order].astype(np.int64))


def to_uint8_images(x: np.ndarray) -> np.ndarray:
    """Rectify and scale real-valued features onto 0..255.

    Negative values become 0 and the maximum maps to 255, giving mostly dark
    images with bright class-dependent pixels, similar in statistics to MNIST.
    """
    hi = float(x.max())
    scaled = np.clip(x, 0.0, None) / hi if hi > 0 else np.zeros_like(x)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def write_synthetic_files(out, fmt: str = "idx", shape: Sequence[int] = (1, 28, 28), *, classes: int = 10,
                          per_class: int = 1000, margin: float = 4.0, noise: float = 1.0, modes: int = 1,
                          border: int = 0, test_fraction: float = 0.2, seed: int = 0) -> dict[str, Path]:
    """Write a synthetic train/test split as IDX or CIFAR-10 binary files.

    With ``border > 0`` the blobs are drawn in the interior and padded with
    zeros, like the 20x20 digit box inside a 28x28 MNIST frame.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    shape = tuple(shape)
    if border and (len(shape) != 3 or min(shape[1:]) <= 2 * border):
        raise ValueError("border needs a (C, H, W) shape larger than twice the border")
    if fmt == "cifar10_bin" and shape != (3, 32, 32):
        raise ValueError("cifar10_bin output requires shape 3,32,32")
    inner = (shape[0], shape[1] - 2 * border, shape[2] - 2 * border) if border else shape
    data = synthetic_dataset(SyntheticSpec(classes, per_class, inner, margin, noise, modes), seed)
    pixels = to_uint8_images(data.inputs)
    if border:
        pixels = np.pad(pixels, ((0, 0), (0, 0), (border, border), (border, border)))
    labels = data.labels.astype(np.uint8)

    n_test = int(round(test_fraction * len(data)))
    paths = {}
    for part, sl in (("train", slice(n_test, None)), ("test", slice(0, n_test))):
        if fmt == "idx":
            imgs = pixels[sl]
            if imgs.ndim == 4 and imgs.shape[1] == 1:
                imgs = imgs[:, 0]
            paths[f"{part}_images"] = out / f"{part}-images-idx{imgs.ndim}-ubyte"
            paths[f"{part}_labels"] = out / f"{part}-labels-idx1-ubyte"
            write_idx(paths[f"{part}_images"], imgs)
            write_idx(paths[f"{part}_labels"], labels[sl])
        elif fmt == "cifar10_bin":
            paths[part] = out / f"{part}_batch.bin"
            write_cifar10_bin(paths[part], pixels[sl], labels[sl])
        else:
            raise ValueError(f"unknown format {fmt!r}")
    return paths
