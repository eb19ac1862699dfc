"""Per-pixel warp fields.

2D fields (translation, affine, SE(2), slanted-plane disparity) turn a
per-pixel parameter map into sampling coordinates over the raw pixel
lattice ``x in [0, W-1]``, ``y in [0, H-1]``. 3D fields (per-pixel Sim3 and
the 10-DoF anchored transform) act on per-pixel 3D points.
"""

import numpy as np

from .grids import check_same_shape, check_scalar_grid, check_vector_grid, pixel_lattice
from .lie import ParameterDomainError, so3_backward, so3_exp
from .robust import RobustLoss, psi, rho

_IDENTITY_AFFINE = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def _lattice_for(field):
    return pixel_lattice(field.shape[0], field.shape[1])


def flow_translation(field):
    f = check_vector_grid(field, 2, "flow field")
    return _lattice_for(f) + f


def flow_translation_backward(grad_coords):
    return check_vector_grid(grad_coords, 2, "grad_coords").copy()


def translation_to_affine(field):
    """Embed a translation field as ``(1, 0, tx, 0, 1, ty)`` per pixel."""
    f = check_vector_grid(field, 2, "flow field")
    out = np.broadcast_to(_IDENTITY_AFFINE, f.shape[:2] + (6,)).copy()
    out[..., 2] = f[..., 0]
    out[..., 5] = f[..., 1]
    return out


def identity_affine_field(height, width):
    return np.broadcast_to(_IDENTITY_AFFINE, (height, width, 6)).copy()


def flow_affine(field):
    """``x' = a0 x + a1 y + a2``, ``y' = a3 x + a4 y + a5`` per pixel."""
    a = check_vector_grid(field, 6, "affine field")
    lat = _lattice_for(a)
    x, y = lat[..., 0], lat[..., 1]
    return np.stack(
        [a[..., 0] * x + a[..., 1] * y + a[..., 2], a[..., 3] * x + a[..., 4] * y + a[..., 5]],
        axis=-1,
    )


def flow_affine_backward(grad_coords):
    g = check_vector_grid(grad_coords, 2, "grad_coords")
    lat = _lattice_for(g)
    x, y = lat[..., 0], lat[..., 1]
    gx, gy = g[..., 0], g[..., 1]
    return np.stack([gx * x, gx * y, gx, gy * x, gy * y, gy], axis=-1)


def flow_se2(field):
    """Per-pixel planar rigid motion ``Rot(theta) (x, y) + (tx, ty)``.

    Channels are ``(theta, tx, ty)``.
    """
    f = check_vector_grid(field, 3, "SE(2) field")
    lat = _lattice_for(f)
    x, y = lat[..., 0], lat[..., 1]
    c, s = np.cos(f[..., 0]), np.sin(f[..., 0])
    return np.stack([c * x - s * y + f[..., 1], s * x + c * y + f[..., 2]], axis=-1)


def flow_se2_backward(field, grad_coords):
    f = check_vector_grid(field, 3, "SE(2) field")
    g = check_vector_grid(grad_coords, 2, "grad_coords")
    check_same_shape(f, g, ("field", "grad_coords"))
    lat = _lattice_for(f)
    x, y = lat[..., 0], lat[..., 1]
    c, s = np.cos(f[..., 0]), np.sin(f[..., 0])
    gx, gy = g[..., 0], g[..., 1]
    dtheta = gx * (-s * x - c * y) + gy * (c * x - s * y)
    return np.stack([dtheta, gx, gy], axis=-1)


def plane_disparity(field):
    """Disparity ``a x + b y + c`` from a per-pixel ``(a, b, c)`` map."""
    f = check_vector_grid(field, 3, "plane field")
    lat = _lattice_for(f)
    return f[..., 0] * lat[..., 0] + f[..., 1] * lat[..., 1] + f[..., 2]


def plane_disparity_backward(grad_disparity):
    g = check_scalar_grid(grad_disparity, "grad_disparity")
    lat = pixel_lattice(*g.shape)
    return np.stack([g * lat[..., 0], g * lat[..., 1], g], axis=-1)


def disparity_to_grid(disparity):
    """Stereo sampling grid ``(x - d, y)``."""
    d = check_scalar_grid(disparity, "disparity")
    lat = pixel_lattice(*d.shape)
    lat[..., 0] -= d
    return lat


def disparity_to_grid_backward(grad_coords):
    g = check_vector_grid(grad_coords, 2, "grad_coords")
    return -g[..., 0]


def _check_scales(s):
    bad = np.argwhere(~(s > 0))
    if len(bad):
        r, c = bad[0]
        raise ParameterDomainError(f"scale must be > 0 at every pixel; pixel (row={r}, col={c}) has {s[r, c]}")


def _check_points(field, points):
    p = check_vector_grid(points, 3, "points")
    check_same_shape(field, p, ("field", "points"))
    return p


def pixel_sim3(field, points):
    """``x'_i = s_i R(v_i) x_i + t_i``; channels ``(v1, v2, v3, t1, t2, t3, s)``."""
    f = check_vector_grid(field, 7, "Sim3 field")
    p = _check_points(f, points)
    _check_scales(f[..., 6])
    R = so3_exp(f[..., :3])
    return f[..., 6, None] * np.einsum("hwij,hwj->hwi", R, p) + f[..., 3:6]


def pixel_sim3_backward(field, points, grad_out):
    """Returns ``(grad_field, grad_points)``."""
    f = check_vector_grid(field, 7, "Sim3 field")
    p = _check_points(f, points)
    g = check_vector_grid(grad_out, 3, "grad_out")
    _check_scales(f[..., 6])
    v, s = f[..., :3], f[..., 6]
    R = so3_exp(v)
    outer = g[..., :, None] * p[..., None, :]
    grad_v = so3_backward(v, R, s[..., None, None] * outer)
    grad_s = np.sum(outer * R, axis=(-2, -1))
    grad_field = np.concatenate([grad_v, g, grad_s[..., None]], axis=-1)
    grad_points = s[..., None] * np.einsum("hwji,hwj->hwi", R, g)
    return grad_field, grad_points


def pixel_10dof(field, points):
    """``x'_i = s_i (R_i (x_i - p_i) + p_i) + t_i`` with rotation about a
    per-pixel anchor ``p_i``.

    Channels are ``(v1, v2, v3, t1, t2, t3, p1, p2, p3, s)``.
    """
    f = check_vector_grid(field, 10, "10-DoF field")
    x = _check_points(f, points)
    _check_scales(f[..., 9])
    R = so3_exp(f[..., :3])
    anchor = f[..., 6:9]
    rotated = np.einsum("hwij,hwj->hwi", R, x - anchor) + anchor
    return f[..., 9, None] * rotated + f[..., 3:6]


def pixel_10dof_backward(field, points, grad_out):
    f = check_vector_grid(field, 10, "10-DoF field")
    x = _check_points(f, points)
    g = check_vector_grid(grad_out, 3, "grad_out")
    _check_scales(f[..., 9])
    v, anchor, s = f[..., :3], f[..., 6:9], f[..., 9]
    R = so3_exp(v)
    rel = x - anchor
    rotated = np.einsum("hwij,hwj->hwi", R, rel) + anchor
    grad_v = so3_backward(v, R, s[..., None, None] * (g[..., :, None] * rel[..., None, :]))
    rt_g = np.einsum("hwji,hwj->hwi", R, g)
    grad_anchor = s[..., None] * (g - rt_g)
    grad_s = np.sum(g * rotated, axis=-1)
    grad_field = np.concatenate([grad_v, g, grad_anchor, grad_s[..., None]], axis=-1)
    return grad_field, s[..., None] * rt_g


def smoothness_penalty(field, loss=None):
    """Robust penalty on forward differences to the right and down
    neighbours, summed over channels. Returns ``(cost, grad_field)``.

    Defaults to a Huber loss.
    """
    f = np.asarray(field, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    f = check_vector_grid(f, name="field")
    loss = loss or RobustLoss("huber")
    grad = np.zeros_like(f)
    cost = 0.0
    for axis in (1, 0):
        delta = np.diff(f, axis=axis)
        cost += float(np.sum(rho(loss, delta)))
        d = psi(loss, delta)
        lead = [slice(None)] * 3
        trail = [slice(None)] * 3
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        grad[tuple(lead)] += d
        grad[tuple(trail)] -= d
    return cost, grad.reshape(np.shape(field))
