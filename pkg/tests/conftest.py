"""Shared test helpers: finite-difference oracles and synthetic fixtures."""

import gzip
import struct

import numpy as np
import pytest

import spectral_gain.layers as L
from spectral_gain.network import Network


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    """Worst element-wise relative error, with an absolute floor on the scale."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(got), np.abs(want)), floor)
    return float((np.abs(got - want) / scale).max())


def fd_gradient(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function at every coordinate."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        grad[idx] = (f(xp) - f(xm)) / (2.0 * eps)
    return grad


def maxpool_tie_mask(x: np.ndarray, spec: L.LayerSpec, tol: float = 1e-4) -> np.ndarray:
    """True at coordinates belonging to any pool window with a near-tied max.

    Finite differences are unreliable there because the argmax can flip.
    """
    k, s = spec.window, spec.stride
    mask = np.zeros(x.shape, dtype=bool)
    h, w = x.shape[:2]
    for r0 in range(0, h - k + 1, s):
        for c0 in range(0, w - k + 1, s):
            win = x[r0:r0 + k, c0:c0 + k]
            flat = win.reshape(k * k, *win.shape[2:])
            top2 = np.sort(flat, axis=0)[-2:]
            tied = (top2[1] - top2[0]) < tol
            mask[r0:r0 + k, c0:c0 + k] |= tied
    return mask


# ---------------------------------------------------------------------------
# random small networks covering every layer kind


def small_net(rng: np.random.Generator, variant: int) -> tuple[Network, np.ndarray]:
    """One of several tiny architectures plus a matching random input."""
    def rconv(kh, kw, cin, cout, stride=1, pad=0):
        return L.conv(rng.normal(size=(kh, kw, cin, cout)) * 0.7,
                      rng.normal(size=cout) * 0.1, stride=stride, pad=pad)

    def rfc(din, dout):
        return L.fc(rng.normal(size=(din, dout)) * 0.6, rng.normal(size=dout) * 0.1)

    variants = [
        lambda: (((rconv(3, 3, 1, 3), L.relu(), L.maxpool(2, 2), rfc(12, 4), L.softmax()), (6, 6, 1))),
        lambda: (((rconv(3, 3, 2, 4, pad=1), L.avgpool(2, 2), L.relu(), rfc(36, 5), L.softmax()), (6, 6, 2))),
        lambda: (((rconv(2, 2, 1, 2, stride=2), L.relu(), rfc(8, 3), L.softmax()), (4, 4, 1))),
        lambda: (((rconv(3, 3, 1, 2, pad=1), L.maxpool(3, 2, pad=1), rconv(2, 2, 2, 3), L.relu(), rfc(12, 4), L.softmax()), (5, 5, 1))),
        lambda: (((L.maxpool(2, 2), rconv(2, 2, 2, 3), L.relu(), L.avgpool(2, 2, pad=1), rfc(12, 3), L.softmax()), (6, 6, 2))),
        lambda: (((rfc(18, 6), L.softmax()), (3, 3, 2))),
        lambda: (((rconv(3, 3, 1, 2), L.avgpool(2, 1), L.relu(), rconv(2, 2, 2, 2), rfc(8, 4), L.softmax()), (6, 6, 1))),
    ]
    specs, in_shape = variants[variant % len(variants)]()
    net = Network(layers=tuple(specs), input_shape=in_shape)
    x = rng.normal(size=in_shape)
    return net, x


# ---------------------------------------------------------------------------
# synthetic dataset files


def write_idx_pair(dirpath, images: np.ndarray, labels: np.ndarray, prefix: str = "train",
                   compress: bool = False):
    """Write an MNIST-format IDX image/label pair; images are (n, h, w) uint8."""
    n, h, w = images.shape
    img_path = dirpath / f"{prefix}-images-idx3-ubyte"
    lbl_path = dirpath / f"{prefix}-labels-idx1-ubyte"
    img_bytes = struct.pack(">IIII", 2051, n, h, w) + images.astype(np.uint8).tobytes()
    lbl_bytes = struct.pack(">II", 2049, n) + labels.astype(np.uint8).tobytes()
    if compress:
        img_path = img_path.with_suffix(".gz")
        lbl_path = lbl_path.with_suffix(".gz")
        img_bytes = gzip.compress(img_bytes)
        lbl_bytes = gzip.compress(lbl_bytes)
    img_path.write_bytes(img_bytes)
    lbl_path.write_bytes(lbl_bytes)
    return img_path, lbl_path


def write_cifar_batch(path, images: np.ndarray, labels: np.ndarray):
    """Write a CIFAR-10 binary batch; images are (n, 32, 32, 3) uint8."""
    n = images.shape[0]
    planes = np.transpose(images.astype(np.uint8), (0, 3, 1, 2)).reshape(n, 3072)
    records = np.concatenate([labels.astype(np.uint8)[:, None], planes], axis=1)
    path.write_bytes(records.tobytes())
    return path


def synthetic_cifar(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Learnable 10-class 32x32x3 image set: smooth class motifs plus noise."""
    yy, xx = np.mgrid[0:32, 0:32] / 32.0
    motifs = []
    motif_rng = np.random.default_rng(1234)  # class motifs fixed across calls
    for d in range(10):
        base = np.zeros((32, 32, 3))
        for ch in range(3):
            fy, fx = motif_rng.integers(1, 4, size=2)
            phase = motif_rng.uniform(0, 2 * np.pi)
            base[:, :, ch] = np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
        motifs.append(base)
    labels = rng.integers(0, 10, size=n)
    images = np.zeros((n, 32, 32, 3))
    for i, lab in enumerate(labels):
        noise = rng.normal(scale=0.9, size=(32, 32, 3))
        img = 0.5 + 0.25 * motifs[lab] + 0.2 * noise
        images[i] = np.clip(img, 0, 1)
    return np.round(images * 255).astype(np.uint8), labels.astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
