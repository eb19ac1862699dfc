"""Exponential-map layers for SO3, SE3 and Sim3, plus quaternion and
Euler-angle rotation layers.

Every forward function has a ``*_backward`` partner that maps the upstream
gradient ``dC/dOutput`` to ``dC/dInput``. Rotation functions broadcast over
leading axes, so ``v`` may be ``(3,)`` or ``(..., 3)``.
"""

import numpy as np

SMALL_ANGLE_THRESHOLD = 1e-8

_EYE = np.eye(3)


class ParameterDomainError(ValueError):
    """Raised for parameters outside a layer's domain (e.g. scale <= 0)."""


def skew(v):
    """``[v]x`` such that ``skew(v) @ u == cross(v, u)``."""
    v = np.asarray(v, dtype=np.float64)
    z = np.zeros(v.shape[:-1])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def _rodrigues_coefficients(theta):
    small = theta < SMALL_ANGLE_THRESHOLD
    safe = np.where(small, 1.0, theta)
    half = 0.5 * safe
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    # 2 sin^2(t/2) / t^2 avoids the cancellation in (1 - cos t) / t^2
    b = np.where(small, 0.5 - theta**2 / 24.0, 0.5 * (np.sin(half) / half) ** 2)
    return a, b


def so3_exp(v):
    """Rotation matrix ``exp([v]x)`` by the Rodrigues formula."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)
    a, b = _rodrigues_coefficients(theta)
    k = skew(v)
    return _EYE + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_generators(v, R):
    """Stack of ``dR/dv_i`` with shape ``(..., 3, 3, 3)``, index ``i`` first
    after the batch axes.

    Uses ``(v_i [v]x + [v x (I - R) e_i]x) / |v|^2 R`` and, below the small
    angle threshold, its limit ``[e_i]x``.
    """
    v = np.asarray(v, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    theta2 = np.sum(v * v, axis=-1)
    small = theta2 < SMALL_ANGLE_THRESHOLD**2
    safe = np.where(small, 1.0, theta2)
    k = skew(v)
    i_minus_r = _EYE - R
    out = []
    for i in range(3):
        col = i_minus_r[..., :, i]
        num = v[..., i, None, None] * k + skew(np.cross(v, col))
        d = (num / safe[..., None, None]) @ R
        gen = skew(_EYE[i])
        out.append(np.where(small[..., None, None], gen, d))
    return np.stack(out, axis=-3)


def so3_backward(v, R, grad_R):
    """``dC/dv_i = sum_jk grad_R[j, k] * dR/dv_i[j, k]``."""
    gens = so3_generators(v, R)
    g = np.asarray(grad_R, dtype=np.float64)
    return np.sum(gens * g[..., None, :, :], axis=(-2, -1))


def _split_se3(params):
    p = np.asarray(params, dtype=np.float64)
    if p.shape[-1] != 6:
        raise ParameterDomainError(f"SE3 parameters need 6 values, got {p.shape[-1]}")
    return p[..., :3], p[..., 3:6]


def se3_forward(params):
    """3x4 transform ``[R(v) | t]`` from ``(v1, v2, v3, t1, t2, t3)``.

    The translation column is the raw ``t``; it is not coupled to the
    rotation through the SE3 left Jacobian.
    """
    v, t = _split_se3(params)
    return np.concatenate([so3_exp(v), t[..., :, None]], axis=-1)


def se3_backward(params, grad_T):
    v, _ = _split_se3(params)
    g = np.asarray(grad_T, dtype=np.float64)
    R = so3_exp(v)
    return np.concatenate([so3_backward(v, R, g[..., :, :3]), g[..., :, 3]], axis=-1)


def _split_sim3(params):
    p = np.asarray(params, dtype=np.float64)
    if p.shape[-1] != 7:
        raise ParameterDomainError(f"Sim3 parameters need 7 values, got {p.shape[-1]}")
    s = p[..., 6]
    if np.any(~(s > 0)):
        raise ParameterDomainError(f"Sim3 scale must be > 0, got {s}")
    return p[..., :3], p[..., 3:6], s


def sim3_forward(params):
    """3x4 transform ``[s R(v) | t]`` from ``(v1, v2, v3, t1, t2, t3, s)``."""
    v, t, s = _split_sim3(params)
    sr = s[..., None, None] * so3_exp(v)
    return np.concatenate([sr, t[..., :, None]], axis=-1)


def sim3_backward(params, grad_T):
    v, _, s = _split_sim3(params)
    g = np.asarray(grad_T, dtype=np.float64)
    R = so3_exp(v)
    block = g[..., :, :3]
    grad_s = np.sum(block * R, axis=(-2, -1))
    grad_v = so3_backward(v, R, s[..., None, None] * block)
    return np.concatenate([grad_v, g[..., :, 3], grad_s[..., None]], axis=-1)


def _quat_unit(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1)
    if np.any(n < 1e-12):
        raise ParameterDomainError("quaternion norm below 1e-12")
    return q / n[..., None], n


def _quat_matrix(u):
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_to_rotation(q):
    """Rotation matrix of quaternion ``(w, x, y, z)``, normalised first."""
    u, _ = _quat_unit(q)
    return _quat_matrix(u)


def quat_to_rotation_backward(q, grad_R):
    u, n = _quat_unit(q)
    w, x, y, z = u[..., 0], u[..., 1], u[..., 2], u[..., 3]
    zero = np.zeros_like(w)

    def m(rows):
        return np.stack([np.stack(r, -1) for r in rows], -2)

    dw = m([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dx = m([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = m([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dz = m([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    g = np.asarray(grad_R, dtype=np.float64)
    grad_u = 2.0 * np.stack(
        [np.sum(g * d, axis=(-2, -1)) for d in (dw, dx, dy, dz)], axis=-1
    )
    # d(q/|q|)/dq = (I - u u^T) / |q|
    radial = np.sum(grad_u * u, axis=-1, keepdims=True)
    return (grad_u - radial * u) / n[..., None]


def _axis_rotations(angles):
    a = np.asarray(angles, dtype=np.float64)
    c, s = np.cos(a), np.sin(a)
    one, zero = np.ones_like(c[..., 0]), np.zeros_like(c[..., 0])

    def m(rows):
        return np.stack([np.stack(r, -1) for r in rows], -2)

    cx, sx = c[..., 0], s[..., 0]
    cy, sy = c[..., 1], s[..., 1]
    cz, sz = c[..., 2], s[..., 2]
    rx = m([[one, zero, zero], [zero, cx, -sx], [zero, sx, cx]])
    ry = m([[cy, zero, sy], [zero, one, zero], [-sy, zero, cy]])
    rz = m([[cz, -sz, zero], [sz, cz, zero], [zero, zero, one]])
    drx = m([[zero, zero, zero], [zero, -sx, -cx], [zero, cx, -sx]])
    dry = m([[-sy, zero, cy], [zero, zero, zero], [-cy, zero, -sy]])
    drz = m([[-sz, -cz, zero], [cz, -sz, zero], [zero, zero, zero]])
    return (rx, ry, rz), (drx, dry, drz)


def euler_to_rotation(angles):
    """``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` for ``angles = (roll, pitch, yaw)``."""
    (rx, ry, rz), _ = _axis_rotations(angles)
    return rz @ ry @ rx


def euler_to_rotation_backward(angles, grad_R):
    (rx, ry, rz), (drx, dry, drz) = _axis_rotations(angles)
    g = np.asarray(grad_R, dtype=np.float64)
    parts = (rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx)
    return np.stack([np.sum(g * d, axis=(-2, -1)) for d in parts], axis=-1)


def compose(T1, T2):
    """``T1 * T2`` for 3x4 transforms."""
    T1 = np.asarray(T1, dtype=np.float64)
    T2 = np.asarray(T2, dtype=np.float64)
    return np.concatenate([T1[:, :3] @ T2[:, :3], (T1[:, :3] @ T2[:, 3] + T1[:, 3])[:, None]], axis=1)


def invert_se3(T):
    """Inverse of a rigid 3x4 transform: ``[R^T | -R^T t]``."""
    T = np.asarray(T, dtype=np.float64)
    rt = T[:, :3].T
    return np.concatenate([rt, (-rt @ T[:, 3])[:, None]], axis=1)


def so3_log(R):
    """Axis-angle vector of a rotation matrix (angle in ``[0, pi)``)."""
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * w
    return theta / (2.0 * np.sin(theta)) * w


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, radians."""
    cos = np.clip((np.trace(np.asarray(R)) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos))
