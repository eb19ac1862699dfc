"""Analytic renderings of simple scenes with known relative pose.

Images are rendered pointwise from a smooth procedural texture, so the
pair is exact (no resampling) and the true pose is known.
"""

import numpy as np

from .camera import ray_grid
from .lie import so3_exp


def smooth_texture(points, seed=0, n_waves=6, freq=(6.0, 14.0), lo=0.25, hi=0.75):
    """Band-limited texture over 3D points (or directions), values in
    ``[lo, hi]``."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_waves, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    k = dirs * rng.uniform(*freq, size=(n_waves, 1))
    phase = rng.uniform(0, 2 * np.pi, size=n_waves)
    p = np.asarray(points, dtype=np.float64)
    s = np.sin(p @ k.T + phase).sum(axis=-1) / n_waves
    return lo + (hi - lo) * 0.5 * (1.0 + np.clip(s, -1.0, 1.0))


def render_rotation_pair(shape, K, rotvec, seed=0, **texture):
    """Texture on the sphere of view directions, seen before and after a
    pure rotation. ``live(pi(R p_hat(x))) == ref(x)``."""
    R = so3_exp(rotvec)
    rays = ray_grid(*shape, K)
    dirs = rays / np.linalg.norm(rays, axis=-1, keepdims=True)
    ref = smooth_texture(dirs, seed, **texture)
    live = smooth_texture(dirs @ R, seed, **texture)
    return ref, live


def render_plane_pair(shape, K, pose, normal=(0.25, -0.15, 1.0), offset=2.0, seed=0, **texture):
    """Textured plane ``n . p = offset`` (reference frame) seen from the
    reference camera and from a camera with ``p_live = R p_ref + t``.

    Returns ``(ref, live, ref_depth)``.
    """
    pose = np.asarray(pose, dtype=np.float64)
    R, t = so3_exp(pose[:3]), pose[3:6]
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    h = offset * n[2]
    rays = ray_grid(*shape, K)
    depth = h / (rays @ n)
    ref = smooth_texture(rays * depth[..., None], seed, **texture)
    n_live = R @ n
    lam = (h + n_live @ t) / (rays @ n_live)
    pts_live = rays * lam[..., None]
    pts_ref = (pts_live - t) @ R
    live = smooth_texture(pts_ref, seed, **texture)
    return ref, live, depth
