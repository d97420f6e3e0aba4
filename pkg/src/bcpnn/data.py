"""MNIST ingestion, hypercolumnar input/label encoding, stratified sampling.

Images are encoded one hypercolumn per pixel with two complementary units
(on/off), so the 28x28 input becomes a 784x2 layer.  Labels occupy a single
10-unit hypercolumn.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .core import ActivityVector, LayerGeometry
from .errors import ConfigError, DataError, FormatError, ValidationError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10

LABEL_GEOMETRY = LayerGeometry(1, N_CLASSES)


class EncodingMode(enum.Enum):
    BINARY = "binary"    # threshold at half intensity: (1,0) or (0,1)
    GRADED = "graded"    # complementary intensity: (v, 1-v)


@dataclass
class Dataset:
    """Aligned images and labels for one split."""

    images: np.ndarray  # (n, rows, cols) uint8
    labels: np.ndarray  # (n,) integer class indices
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise DataError("labels must lie in 0..9")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_pixels(self) -> int:
        return int(np.prod(self.images.shape[1:]))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated IDX file: expected {n} bytes of {what}, "
                          f"got {len(buf)}")
    return buf


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IMAGE_MAGIC:
            raise FormatError(
                f"bad image magic 0x{magic:08x} in {images_path} "
                f"(expected 0x{IMAGE_MAGIC:08x})"
            )
        payload = _read_exact(fh, count * rows * cols, "image payload")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != LABEL_MAGIC:
            raise FormatError(
                f"bad label magic 0x{magic:08x} in {labels_path} "
                f"(expected 0x{LABEL_MAGIC:08x})"
            )
        labels = np.frombuffer(_read_exact(fh, label_count, "label payload"),
                               dtype=np.uint8).astype(np.int64)
    if count != label_count:
        raise DataError(f"image count {count} != label count {label_count}")
    return Dataset(images.copy(), labels, split)


def save_idx(dataset: Dataset, images_path, labels_path):
    """Write a Dataset back out as an IDX file pair (round-trip safe)."""
    n, rows, cols = (len(dataset),) + tuple(dataset.images.shape[1:])
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        fh.write(np.ascontiguousarray(dataset.images, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, n))
        fh.write(np.ascontiguousarray(dataset.labels, dtype=np.uint8).tobytes())


def input_geometry(n_pixels: int = 784) -> LayerGeometry:
    return LayerGeometry(n_pixels, 2)


def encode_image(pixels: np.ndarray, mode: EncodingMode = EncodingMode.BINARY) -> ActivityVector:
    """Encode one image as a (pixels x 2) activity vector.

    Unit 0 of each hypercolumn is "on", unit 1 is "off"; v = pixel / 255.
    Binary mode emits (1,0) when v >= 0.5 else (0,1); graded emits (v, 1-v).
    """
    flat = np.asarray(pixels).ravel()
    values = _encode_pixels(flat[None, :], mode)[0]
    return ActivityVector(input_geometry(flat.size), values)


def encode_images(images: np.ndarray, mode: EncodingMode = EncodingMode.BINARY) -> np.ndarray:
    """Batch variant of encode_image: (n, ...) pixels -> (n, 2*pixels) matrix."""
    flat = np.asarray(images).reshape(len(images), -1)
    return _encode_pixels(flat, mode)


def _encode_pixels(flat: np.ndarray, mode: EncodingMode) -> np.ndarray:
    v = flat.astype(np.float64) / 255.0
    if mode is EncodingMode.BINARY:
        on = (v >= 0.5).astype(np.float64)
    elif mode is EncodingMode.GRADED:
        on = v
    else:
        raise ConfigError(f"unknown encoding mode {mode!r}")
    out = np.empty((flat.shape[0], flat.shape[1] * 2))
    out[:, 0::2] = on
    out[:, 1::2] = 1.0 - on
    return out


def encode_label(label: int) -> ActivityVector:
    """One-hot activity over the single 10-unit output hypercolumn."""
    if not 0 <= int(label) < N_CLASSES:
        raise ValidationError(f"label {label} outside 0..{N_CLASSES - 1}")
    values = np.zeros(N_CLASSES)
    values[int(label)] = 1.0
    return ActivityVector(LABEL_GEOMETRY, values)


def stratified_sample(labels: np.ndarray, n: int, seed: int,
                      n_classes: int = N_CLASSES) -> np.ndarray:
    """Draw exactly n/n_classes indices per class, uniformly without
    replacement, seeded.  Output is ordered by (class, draw order)."""
    if n % n_classes != 0:
        raise ConfigError(f"sample size {n} is not divisible by {n_classes}")
    per_class = n // n_classes
    rng = np.random.default_rng(seed)
    chunks = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        if pool.size < per_class:
            raise DataError(
                f"class {c} has only {pool.size} samples, need {per_class}"
            )
        chunks.append(rng.choice(pool, size=per_class, replace=False))
    return np.concatenate(chunks).astype(np.int64)
