"""Pinhole projection, inverse projection and the depth-driven 3D grid
generator, each with its backward pass."""

from dataclasses import dataclass

import numpy as np

from .grids import check_scalar_grid, check_vector_grid, pixel_lattice

W_EPSILON = 1e-6


class DepthSingularityError(ValueError):
    """Point too close to the camera plane to project."""


class InvalidDepthError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]])

    def downsampled(self):
        """Intrinsics for a 2x2 box-averaged image.

        With pixel centres at integer coordinates, coarse pixel ``i`` sits at
        fine coordinate ``2 i + 0.5``.
        """
        return CameraIntrinsics(
            self.fx / 2.0, self.fy / 2.0, (self.px - 0.5) / 2.0, (self.py - 0.5) / 2.0
        )

    @classmethod
    def from_string(cls, text):
        vals = [float(t) for t in text.replace(",", " ").split()]
        if len(vals) != 4:
            raise ValueError(f"intrinsics need 4 numbers 'fx fy px py', got {len(vals)}")
        return cls(*vals)

    def to_string(self):
        return f"{self.fx!r} {self.fy!r} {self.px!r} {self.py!r}"


def project(p, K, w_eps=W_EPSILON):
    """Pixel ``(fx u/w + px, fy v/w + py)`` of a single 3D point."""
    u, v, w = (float(c) for c in p)
    if abs(w) < w_eps:
        raise DepthSingularityError(f"point ({u}, {v}, {w}) has |w| < {w_eps}")
    return np.array([K.fx * u / w + K.px, K.fy * v / w + K.py])


def project_jacobian(p, K):
    u, v, w = (float(c) for c in p)
    return np.array(
        [[K.fx / w, 0.0, -K.fx * u / (w * w)], [0.0, K.fy / w, -K.fy * v / (w * w)]]
    )


def project_backward(p, K, grad_pix, w_eps=W_EPSILON):
    if abs(float(p[2])) < w_eps:
        raise DepthSingularityError(f"point {tuple(p)} has |w| < {w_eps}")
    return np.asarray(grad_pix, dtype=np.float64) @ project_jacobian(p, K)


def inverse_project(x, depth, K):
    """3D point ``K^-1 (x, y, 1) * depth``."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be > 0, got {depth}")
    return np.array(
        [(x[0] - K.px) / K.fx * depth, (x[1] - K.py) / K.fy * depth, float(depth)]
    )


def project_points(points, K, w_eps=W_EPSILON):
    """Grid path of :func:`project`.

    Returns ``(pixels, valid)``. Points with ``w < w_eps`` (behind or too
    near the camera) are flagged invalid and their pixels set to ``-1``.
    """
    pts = np.asarray(points, dtype=np.float64)
    w = pts[..., 2]
    valid = w >= w_eps
    safe = np.where(valid, w, 1.0)
    pix = np.stack(
        [K.fx * pts[..., 0] / safe + K.px, K.fy * pts[..., 1] / safe + K.py], axis=-1
    )
    pix[~valid] = -1.0
    return pix, valid


def project_points_backward(points, K, grad_pix, valid):
    pts = np.asarray(points, dtype=np.float64)
    g = np.asarray(grad_pix, dtype=np.float64)
    w = np.where(valid, pts[..., 2], 1.0)
    gx, gy = g[..., 0], g[..., 1]
    out = np.stack(
        [
            K.fx * gx / w,
            K.fy * gy / w,
            -(K.fx * gx * pts[..., 0] + K.fy * gy * pts[..., 1]) / (w * w),
        ],
        axis=-1,
    )
    out[~valid] = 0.0
    return out


def ray_grid(height, width, K):
    """Per-pixel ``K^-1 (x, y, 1)``, i.e. the point at unit depth."""
    lat = pixel_lattice(height, width)
    return np.stack(
        [(lat[..., 0] - K.px) / K.fx, (lat[..., 1] - K.py) / K.fy, np.ones((height, width))],
        axis=-1,
    )


def grid_generator_3d(depth, K, T):
    """Lift every pixel with its depth and apply the 3x4 transform ``T``.

    Returns ``(points, valid)``. Pixels with depth 0 (the invalid sentinel)
    or negative depth map to ``(0, 0, 0)`` with ``valid = False``.
    """
    d = check_scalar_grid(depth, "depth")
    T = np.asarray(T, dtype=np.float64)
    if T.shape != (3, 4):
        raise ValueError(f"transform must be 3x4, got {T.shape}")
    valid = d > 0
    base = ray_grid(*d.shape, K) * np.where(valid, d, 0.0)[..., None]
    points = base @ T[:, :3].T + T[:, 3]
    points[~valid] = 0.0
    return points, valid


def grid_generator_3d_backward(depth, K, T, grad_points):
    """Returns ``(grad_T, grad_depth)``; invalid pixels contribute zero."""
    d = check_scalar_grid(depth, "depth")
    T = np.asarray(T, dtype=np.float64)
    g = check_vector_grid(grad_points, 3, "grad_points")
    valid = d > 0
    g = np.where(valid[..., None], g, 0.0)
    rays = ray_grid(*d.shape, K)
    base = rays * np.where(valid, d, 0.0)[..., None]
    hom = np.concatenate([base, np.ones(d.shape + (1,))], axis=-1)
    hom[~valid] = 0.0
    grad_T = np.einsum("hwi,hwj->ij", g, hom)
    grad_depth = np.einsum("hwi,hwi->hw", g, rays @ T[:, :3].T)
    return grad_T, grad_depth
