"""Differentiable bilinear sampling with a validity mask.

A sample at ``(x, y)`` is valid iff ``0 <= x <= W-1`` and ``0 <= y <= H-1``,
i.e. all four neighbours used lie inside the source. Invalid samples give
0 with mask 0 and pass no gradient.

Cell choice: the cell whose lower corner is ``floor(x)``, except on the last
column/row where the cell below is used. On integer lattice lines this
picks the right-hand linear piece for the coordinate gradient.
"""

import numpy as np

from .grids import check_same_shape, check_scalar_grid, check_vector_grid


def _cells(shape, grid):
    h, w = shape
    x, y = grid[..., 0], grid[..., 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x0, x1, y0, y1, xs - x0, ys - y0, valid


def bilinear_sample(src, grid):
    """Sample ``src`` at continuous ``grid[r, c] = (x, y)``.

    Returns ``(warped, mask)`` shaped like the grid's first two axes.
    """
    img = check_scalar_grid(src, "src")
    g = check_vector_grid(grid, 2, "sample grid")
    x0, x1, y0, y1, fx, fy, valid = _cells(img.shape, g)
    out = (
        (1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
        + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1])
    )
    out = np.where(valid, out, 0.0)
    return out, valid.astype(np.float64)


def bilinear_sample_backward(src, grid, grad_warped):
    """Returns ``(grad_src, grad_grid)``."""
    img = check_scalar_grid(src, "src")
    g = check_vector_grid(grid, 2, "sample grid")
    up = check_scalar_grid(grad_warped, "grad_warped")
    check_same_shape(g, up, ("grid", "grad_warped"))
    x0, x1, y0, y1, fx, fy, valid = _cells(img.shape, g)
    up = np.where(valid, up, 0.0)

    i00, i01 = img[y0, x0], img[y0, x1]
    i10, i11 = img[y1, x0], img[y1, x1]
    dx = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    dy = (1 - fx) * (i10 - i00) + fx * (i11 - i01)
    grad_grid = np.stack([up * dx, up * dy], axis=-1)

    grad_src = np.zeros_like(img)
    # np.add.at scatters sequentially, so the result is deterministic
    np.add.at(grad_src, (y0, x0), up * (1 - fx) * (1 - fy))
    np.add.at(grad_src, (y0, x1), up * fx * (1 - fy))
    np.add.at(grad_src, (y1, x0), up * (1 - fx) * fy)
    np.add.at(grad_src, (y1, x1), up * fx * fy)
    return grad_src, grad_grid


def warp_multichannel(src, grid):
    """Channelwise :func:`bilinear_sample` with one shared mask."""
    img = check_vector_grid(src, name="src")
    outs = []
    mask = None
    for k in range(img.shape[2]):
        out, mask = bilinear_sample(img[..., k], grid)
        outs.append(out)
    return np.stack(outs, axis=-1), mask


def warp_multichannel_backward(src, grid, grad_warped):
    img = check_vector_grid(src, name="src")
    gw = check_vector_grid(grad_warped, img.shape[2], "grad_warped")
    grad_src = np.zeros_like(img)
    grad_grid = np.zeros(np.shape(grid), dtype=np.float64)
    for k in range(img.shape[2]):
        gs, gg = bilinear_sample_backward(img[..., k], grid, gw[..., k])
        grad_src[..., k] = gs
        grad_grid += gg
    return grad_src, grad_grid
