"""Finite-difference checks of every backward pass.

Each check draws a random instance, contracts the forward output with a
random upstream gradient ``g`` to get a scalar ``L = <g, f(x)>``, and
compares the analytic backward pass against central differences of ``L``
(step ``h`` per input component). The error is
``|a - b| / max(|a|, |b|)`` over the whole gradient vector.
"""

from dataclasses import dataclass

import numpy as np

from . import alignment, camera, lie, pixel_fields, robust, sampler
from .camera import CameraIntrinsics
from .synthetic import render_plane_pair, render_rotation_pair

LAYER_TOL = 1e-6
CHAIN_TOL = 1e-4
FD_STEP = 1e-6


@dataclass
class CheckResult:
    module: str
    check: str
    trial: int
    rel_err: float
    tol: float

    @property
    def passed(self):
        return bool(self.rel_err < self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.module} {self.check} trial={self.trial} "
                f"max_rel_err={self.rel_err:.3e} tol={self.tol:.0e} {status}")


def rel_err(a, b):
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f`` at every component of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return out


def _contract(fn, upstream):
    return lambda x: float(np.sum(upstream * fn(x)))


# layer instances ------------------------------------------------------------

_SO3_MAGNITUDES = (1e-9, 1e-3, 0.5, 2.0, 3.0)


def _rotvec(rng, trial):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v) * _SO3_MAGNITUDES[trial % len(_SO3_MAGNITUDES)]


def check_so3(rng, trial, h):
    v = _rotvec(rng, trial)
    g = rng.normal(size=(3, 3))
    analytic = lie.so3_backward(v, lie.so3_exp(v), g)
    return rel_err(analytic, numeric_grad(_contract(lie.so3_exp, g), v, h))


def check_se3(rng, trial, h):
    p = np.concatenate([_rotvec(rng, trial), rng.normal(size=3)])
    g = rng.normal(size=(3, 4))
    analytic = lie.se3_backward(p, g)
    return rel_err(analytic, numeric_grad(_contract(lie.se3_forward, g), p, h))


def check_sim3(rng, trial, h):
    p = np.concatenate([_rotvec(rng, trial), rng.normal(size=3), [rng.uniform(0.3, 3.0)]])
    g = rng.normal(size=(3, 4))
    analytic = lie.sim3_backward(p, g)
    return rel_err(analytic, numeric_grad(_contract(lie.sim3_forward, g), p, h))


def check_quat(rng, trial, h):
    q = rng.normal(size=4) * rng.uniform(0.5, 2.0)
    g = rng.normal(size=(3, 3))
    analytic = lie.quat_to_rotation_backward(q, g)
    return rel_err(analytic, numeric_grad(_contract(lie.quat_to_rotation, g), q, h))


def check_euler(rng, trial, h):
    a = rng.uniform(-np.pi, np.pi, size=3)
    g = rng.normal(size=(3, 3))
    analytic = lie.euler_to_rotation_backward(a, g)
    return rel_err(analytic, numeric_grad(_contract(lie.euler_to_rotation, g), a, h))


def _random_K(rng, h=6, w=7):
    f = rng.uniform(20.0, 60.0)
    return CameraIntrinsics(f, f * rng.uniform(0.9, 1.1), (w - 1) / 2 + rng.normal(), (h - 1) / 2 + rng.normal())


def check_proj(rng, trial, h):
    K = _random_K(rng)
    pts = np.concatenate([rng.normal(size=(5, 6, 2)), rng.uniform(0.5, 3.0, size=(5, 6, 1))], axis=-1)
    g = rng.normal(size=(5, 6, 2))
    valid = np.ones((5, 6), dtype=bool)
    analytic = camera.project_points_backward(pts, K, g, valid)
    fn = lambda p: camera.project_points(p, K)[0]
    return rel_err(analytic, numeric_grad(_contract(fn, g), pts, h))


def check_grid3d(rng, trial, h):
    K = _random_K(rng)
    depth = rng.uniform(0.5, 3.0, size=(6, 7))
    T = lie.se3_forward(np.concatenate([_rotvec(rng, trial), rng.normal(size=3)]))
    g = rng.normal(size=(6, 7, 3))
    gT, gd = camera.grid_generator_3d_backward(depth, K, T, g)
    nT = numeric_grad(_contract(lambda t: camera.grid_generator_3d(depth, K, t)[0], g), T, h)
    nd = numeric_grad(_contract(lambda d: camera.grid_generator_3d(d, K, T)[0], g), depth, h)
    return rel_err(np.concatenate([gT.ravel(), gd.ravel()]), np.concatenate([nT.ravel(), nd.ravel()]))


def _away_from_lattice(rng, shape, lo, hi, margin=1e-3):
    x = rng.uniform(lo, hi, size=shape)
    frac = x - np.floor(x)
    return np.where(np.minimum(frac, 1 - frac) < margin, np.floor(x) + 0.5, x)


def check_sampler(rng, trial, h):
    src = rng.normal(size=(16, 16))
    grid = np.stack([_away_from_lattice(rng, (8, 9), 0.0, 15.0),
                     _away_from_lattice(rng, (8, 9), 0.0, 15.0)], axis=-1)
    g = rng.normal(size=(8, 9))
    gs, gg = sampler.bilinear_sample_backward(src, grid, g)
    ns = numeric_grad(_contract(lambda s: sampler.bilinear_sample(s, grid)[0], g), src, h)
    ng = numeric_grad(_contract(lambda q: sampler.bilinear_sample(src, q)[0], g), grid, h)
    return rel_err(np.concatenate([gs.ravel(), gg.ravel()]), np.concatenate([ns.ravel(), ng.ravel()]))


def check_flow_translation(rng, trial, h):
    f = rng.normal(size=(4, 5, 2))
    g = rng.normal(size=(4, 5, 2))
    analytic = pixel_fields.flow_translation_backward(g)
    return rel_err(analytic, numeric_grad(_contract(pixel_fields.flow_translation, g), f, h))


def check_flow_affine(rng, trial, h):
    f = pixel_fields.identity_affine_field(4, 5) + 0.1 * rng.normal(size=(4, 5, 6))
    g = rng.normal(size=(4, 5, 2))
    analytic = pixel_fields.flow_affine_backward(g)
    return rel_err(analytic, numeric_grad(_contract(pixel_fields.flow_affine, g), f, h))


def check_flow_se2(rng, trial, h):
    f = rng.normal(size=(4, 5, 3))
    g = rng.normal(size=(4, 5, 2))
    analytic = pixel_fields.flow_se2_backward(f, g)
    return rel_err(analytic, numeric_grad(_contract(pixel_fields.flow_se2, g), f, h))


def check_plane(rng, trial, h):
    f = rng.normal(size=(4, 5, 3))
    g = rng.normal(size=(4, 5, 2))
    chain = lambda x: pixel_fields.disparity_to_grid(pixel_fields.plane_disparity(x))
    analytic = pixel_fields.plane_disparity_backward(pixel_fields.disparity_to_grid_backward(g))
    return rel_err(analytic, numeric_grad(_contract(chain, g), f, h))


def _field_with_scale(rng, n, shape=(3, 4)):
    f = rng.normal(size=shape + (n,))
    f[..., :3] = rng.normal(size=shape + (3,)) * rng.uniform(1e-3, 2.0)
    f[..., -1] = rng.uniform(0.3, 3.0, size=shape)
    return f


def _check_3d_field(rng, h, n, fwd, bwd):
    f = _field_with_scale(rng, n)
    pts = rng.normal(size=(3, 4, 3))
    g = rng.normal(size=(3, 4, 3))
    gf, gp = bwd(f, pts, g)
    nf = numeric_grad(_contract(lambda x: fwd(x, pts), g), f, h)
    np_ = numeric_grad(_contract(lambda p: fwd(f, p), g), pts, h)
    return rel_err(np.concatenate([gf.ravel(), gp.ravel()]), np.concatenate([nf.ravel(), np_.ravel()]))


def check_pixel_sim3(rng, trial, h):
    return _check_3d_field(rng, h, 7, pixel_fields.pixel_sim3, pixel_fields.pixel_sim3_backward)


def check_pixel_10dof(rng, trial, h):
    return _check_3d_field(rng, h, 10, pixel_fields.pixel_10dof, pixel_fields.pixel_10dof_backward)


def check_smoothness(rng, trial, h):
    loss = robust.RobustLoss("huber", 0.5)
    f = rng.normal(size=(4, 5, 2))
    _, analytic = pixel_fields.smoothness_penalty(f, loss)
    return rel_err(analytic, numeric_grad(lambda x: pixel_fields.smoothness_penalty(x, loss)[0], f, h))


def _robust_check(kind, scale):
    def check(rng, trial, h):
        loss = robust.RobustLoss(kind, scale)
        x = rng.uniform(-3.0, 3.0, size=40) * loss.scale
        near = np.abs(np.abs(x) - loss.scale) < 1e-3
        x = np.where(near, x * 0.9, x)
        analytic = robust.psi(loss, x)
        numeric = (robust.rho(loss, x + h) - robust.rho(loss, x - h)) / (2.0 * h)
        return rel_err(analytic, numeric)
    return check


# end-to-end -----------------------------------------------------------------

E2E_SHAPE = (32, 32)
E2E_K = CameraIntrinsics(32.0, 32.0, 15.5, 15.5)
E2E_SCALES = {"l2": None, "huber": 0.05, "cauchy": 0.05, "geman_mcclure": None, "tukey": 0.1}


def random_problem(rng, mode, kind):
    """A 32x32 rendered pair and a perturbed pose near the true one."""
    seed = int(rng.integers(1 << 31))
    if mode == "so3":
        truth = rng.normal(0.0, 0.02, size=3)
        ref, live = render_rotation_pair(E2E_SHAPE, E2E_K, truth, seed=seed)
        depth = None
    else:
        truth = rng.normal(0.0, 0.02, size=6)
        ref, live, depth = render_plane_pair(E2E_SHAPE, E2E_K, truth, seed=seed)
    loss = robust.RobustLoss(kind, E2E_SCALES[kind])
    problem = alignment.AlignmentProblem(ref, live, E2E_K, depth, loss, mode)
    return problem, truth + rng.normal(0.0, 0.01, size=truth.shape)


def straddles_kink(problem, params, h):
    """Whether a central-difference stencil of step ``h`` at ``params``
    changes any sample's bilinear cell or validity.

    The cost is only piecewise smooth: it has kinks on lattice lines and
    jumps where pixels enter or leave the mask. Finite differences across
    either say nothing about the analytic gradient, so such instances are
    redrawn rather than checked.
    """
    def cells(p):
        pix, valid = alignment._project_only(problem, p)
        x0, _, y0, _, _, _, inside = sampler._cells(problem.shape, pix)
        return x0, y0, valid & inside

    base = cells(params)
    for i in range(len(params)):
        for sign in (1.0, -1.0):
            p = np.array(params, dtype=np.float64)
            p[i] += sign * h
            other = cells(p)
            if any(np.any(a != b) for a, b in zip(base, other)):
                return True
    return False


def check_photometric(mode, kind):
    def check(rng, trial, h):
        for _ in range(100):
            problem, params = random_problem(rng, mode, kind)
            if not straddles_kink(problem, params, h):
                break
        else:
            raise RuntimeError("could not draw a kink-free instance in 100 attempts")
        analytic = alignment.photometric_gradient(problem, params)
        numeric = numeric_grad(lambda p: alignment.photometric_cost(problem, p)[0], params, h)
        return rel_err(analytic, numeric)
    return check


SUITES = {
    "so3": [("so3_exp", check_so3)],
    "se3": [("se3", check_se3)],
    "sim3": [("sim3", check_sim3)],
    "quat": [("quaternion", check_quat)],
    "euler": [("euler", check_euler)],
    "proj": [("projection", check_proj), ("grid_generator_3d", check_grid3d)],
    "sampler": [("bilinear", check_sampler)],
    "flow": [
        ("translation", check_flow_translation),
        ("affine", check_flow_affine),
        ("se2", check_flow_se2),
        ("plane_disparity", check_plane),
        ("pixel_sim3", check_pixel_sim3),
        ("pixel_10dof", check_pixel_10dof),
        ("smoothness", check_smoothness),
    ],
    "robust": [(k, _robust_check(k, None)) for k in robust.KINDS],
    "photometric": [
        (f"{mode}_{kind}", check_photometric(mode, kind))
        for mode in alignment.MODES for kind in robust.KINDS
    ],
}

MODULES = tuple(SUITES) + ("all",)


def run(module="all", trials=10, tol=None, seed=0, h=FD_STEP):
    """Yield a :class:`CheckResult` per check and trial.

    ``tol`` overrides the default (``1e-6`` per layer, ``1e-4`` for the
    end-to-end photometric chain).
    """
    if module not in MODULES:
        raise ValueError(f"unknown module {module!r}; expected one of {MODULES}")
    names = list(SUITES) if module == "all" else [module]
    for name in names:
        default = CHAIN_TOL if name == "photometric" else LAYER_TOL
        for check_name, check in SUITES[name]:
            rng = np.random.default_rng([seed, sum(map(ord, check_name))])
            for trial in range(trials):
                err = check(rng, trial, h)
                yield CheckResult(name, check_name, trial, err, default if tol is None else tol)
