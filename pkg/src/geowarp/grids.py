"""Dense grid containers and validation helpers.

Grids are plain float64 numpy arrays. A scalar grid has shape ``(H, W)``;
a vector grid has shape ``(H, W, C)``. Indexing is ``(row, col, channel)``
and the image-plane convention is ``x = col``, ``y = row``.
"""

import math

import numpy as np


class GridError(ValueError):
    """Raised when an array does not satisfy a grid contract."""


def make_grid(height, width, channels=1, fill=0.0):
    if min(height, width, channels) < 1:
        raise GridError(
            f"grid dimensions must be >= 1, got ({height}, {width}, {channels})"
        )
    if not math.isfinite(fill):
        raise GridError(f"fill value must be finite, got {fill}")
    return np.full((height, width, channels), float(fill), dtype=np.float64)


def check_scalar_grid(g, name="grid", allow_nonfinite=False):
    """Validate ``g`` as an ``(H, W)`` float64 grid and return it as such.

    A trailing singleton channel axis is squeezed.
    """
    a = np.asarray(g, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise GridError(f"{name} must have shape (H, W), got {a.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(a)):
        raise GridError(f"{name} contains non-finite values")
    return a


def check_vector_grid(g, channels=None, name="grid"):
    a = np.asarray(g, dtype=np.float64)
    if a.ndim != 3 or min(a.shape) < 1:
        raise GridError(f"{name} must have shape (H, W, C), got {a.shape}")
    if channels is not None and a.shape[2] != channels:
        raise GridError(f"{name} must have {channels} channels, got {a.shape[2]}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name} contains non-finite values")
    return a


def check_same_shape(a, b, names=("a", "b")):
    if a.shape[:2] != b.shape[:2]:
        raise GridError(
            f"{names[0]} and {names[1]} disagree in shape: {a.shape[:2]} vs {b.shape[:2]}"
        )


def reduce_sum(g):
    """Sum every element of ``g``.

    Uses exactly-rounded summation, so the result does not depend on
    element order and is bit-reproducible across runs and layouts.
    """
    return math.fsum(np.asarray(g, dtype=np.float64).ravel().tolist())


def pixel_lattice(height, width):
    """Base sampling grid: ``out[r, c] = (c, r)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([xs, ys], axis=-1)
