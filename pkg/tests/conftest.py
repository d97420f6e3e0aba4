"""Shared fixtures: synthetic datasets, trace builders, MNIST discovery."""

import os
import struct

import numpy as np
import pytest

from bcpnn.core import ProbabilityTraces
from bcpnn.data import Dataset

MNIST_ENV = "BCPNN_MNIST_DIR"
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")


def make_traces(src_geom, tgt_geom, p_src, p_tgt, p_joint, epsilon=1e-8):
    return ProbabilityTraces(
        src_geom, tgt_geom,
        np.asarray(p_src, dtype=np.float64),
        np.asarray(p_tgt, dtype=np.float64),
        np.asarray(p_joint, dtype=np.float64),
        epsilon,
    )


def random_traces(rng, src_geom, tgt_geom, epsilon=1e-8):
    """Arbitrary valid traces: every value in [epsilon, 1]."""
    p_src = rng.uniform(epsilon, 1.0, src_geom.n_units)
    p_tgt = rng.uniform(epsilon, 1.0, tgt_geom.n_units)
    p_joint = rng.uniform(epsilon, 1.0, (src_geom.n_units, tgt_geom.n_units))
    return make_traces(src_geom, tgt_geom, p_src, p_tgt, p_joint, epsilon)


def independent_traces(src_geom, tgt_geom, p_src, p_tgt, epsilon=1e-8):
    """Traces whose joint is exactly the product of the marginals."""
    p_src = np.asarray(p_src, dtype=np.float64)
    p_tgt = np.asarray(p_tgt, dtype=np.float64)
    return make_traces(src_geom, tgt_geom, p_src, p_tgt,
                       p_src[:, None] * p_tgt[None, :], epsilon)


def random_simplex_rows(rng, n_rows, n_hc, n_mc):
    """Rows of valid activities: each hypercolumn segment sums to 1."""
    v = rng.dirichlet(np.ones(n_mc), size=(n_rows, n_hc))
    return v.reshape(n_rows, n_hc * n_mc)


def synthetic_dataset(rng, n=200, rows=28, cols=28, split="train"):
    """Random byte images with balanced labels (n divisible by 10)."""
    images = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = np.tile(np.arange(10), n // 10 + 1)[:n].astype(np.int64)
    rng.shuffle(labels)
    return Dataset(images, labels, split)


def structured_dataset(rng, n=300, rows=6, cols=6, split="train"):
    """Class-dependent images: each digit class lights a distinct pixel block,
    so even tiny networks can separate the classes."""
    images = np.zeros((n, rows, cols), dtype=np.uint8)
    labels = np.tile(np.arange(10), n // 10 + 1)[:n].astype(np.int64)
    rng.shuffle(labels)
    for i, lab in enumerate(labels):
        r, c = divmod(int(lab), 5)
        images[i, r * 3:r * 3 + 3, c] = 255
        noise = rng.integers(0, 40, size=(rows, cols), dtype=np.uint8)
        images[i] = np.maximum(images[i], noise)
    return Dataset(images, labels, split)


def write_idx_pair(dataset, images_path, labels_path):
    """Write IDX files by hand, independent of the package's writer."""
    n, rows, cols = dataset.images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, n, rows, cols))
        fh.write(dataset.images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x801, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mnist_dir():
    """Directory holding the real MNIST training files, else skip."""
    candidates = [os.environ.get(MNIST_ENV), os.environ.get("BCPNN_DATA_DIR"),
                  os.path.join(os.path.dirname(__file__), "..", "data", "mnist")]
    for cand in candidates:
        if cand and all(os.path.exists(os.path.join(cand, f)) for f in MNIST_FILES):
            return cand
    pytest.skip(f"MNIST IDX files not found (set {MNIST_ENV} to a directory "
                f"containing {MNIST_FILES[0]} and {MNIST_FILES[1]})")
