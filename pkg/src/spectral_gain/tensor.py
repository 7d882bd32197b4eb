"""Dense tensor primitives used throughout the package.

Tensors are plain numpy float64 arrays in C (row-major) order.  The axis
convention everywhere is (height, width, channels, batch); trailing axes are
dropped for lower-rank data (a single image is (h, w, c), a logit vector is
(n,)).  Broadcasting is deliberately not used at module boundaries: callers
tile explicitly so backward passes stay auditable.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_tensor(values) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def zeros(shape) -> np.ndarray:
    """All-zero tensor. Every extent must be a positive integer."""
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise ShapeError(f"extents must all be >= 1, got {shape}")
    return np.zeros(shape, dtype=np.float64)


def scale(t: np.ndarray, c: float) -> np.ndarray:
    """Element-wise c * t, same shape."""
    return np.multiply(t, float(c), dtype=np.float64)


def argmax_flat(t: np.ndarray) -> tuple[int, float]:
    """Flat index and value of the maximum element; ties go to the lowest index."""
    if t.size == 0:
        raise ShapeError("argmax of an empty tensor")
    idx = int(np.argmax(t))
    return idx, float(t.reshape(-1)[idx])


def flip_spatial(t: np.ndarray) -> np.ndarray:
    """Reverse the height and width axes, leaving channel/batch axes alone."""
    if t.ndim < 2:
        raise ShapeError(f"need height and width axes, got shape {t.shape}")
    return np.ascontiguousarray(t[::-1, ::-1, ...])
