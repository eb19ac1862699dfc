import numpy as np
import pytest

from geowarp import camera, lie, pixel_fields as pf
from geowarp.lie import ParameterDomainError
from geowarp.robust import RobustLoss

from conftest import numeric_grad, rel_err


def lattice(h, w):
    cols, rows = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    return np.stack([cols, rows], axis=-1)


def contract_check(fwd, bwd, x, shape_out, rng, tol, h=1e-5):
    g = rng.normal(size=shape_out)
    num = numeric_grad(lambda v: np.sum(g * fwd(v)), x, h)
    return rel_err(bwd(x, g), num) < tol


def test_translation(rng):
    assert np.array_equal(pf.flow_translation(np.zeros((3, 4, 2))), lattice(3, 4))
    shifted = pf.flow_translation(np.broadcast_to([1.0, 0.0], (2, 2, 2)))
    assert np.array_equal(shifted[..., 0], lattice(2, 2)[..., 0] + 1)
    f = rng.normal(size=(8, 8, 2))
    out = pf.flow_translation(f)
    assert out[3, 5, 0] == 5 + f[3, 5, 0] and out[3, 5, 1] == 3 + f[3, 5, 1]
    up = np.zeros((8, 8, 2))
    up[2, 6] = [0.5, -1.5]
    assert np.array_equal(pf.flow_translation_backward(up), up)
    assert not pf.flow_translation_backward(np.zeros((8, 8, 2))).any()
    for _ in range(10):
        assert contract_check(pf.flow_translation, lambda x, g: pf.flow_translation_backward(g),
                              rng.normal(size=(8, 8, 2)), (8, 8, 2), rng, 1e-8)


def test_affine(rng):
    assert np.array_equal(pf.flow_affine(pf.identity_affine_field(3, 4)), lattice(3, 4))
    F = rng.normal(size=(5, 6, 2))
    assert np.array_equal(pf.flow_affine(pf.translation_to_affine(F)), pf.flow_translation(F))
    a = rng.normal(size=(5, 6, 6))
    out = pf.flow_affine(a)
    for r, c in [(0, 0), (4, 5), (2, 3)]:
        A = a[r, c].reshape(2, 3)
        assert np.allclose(out[r, c], A @ [c, r, 1], atol=1e-14)
    g = np.zeros((5, 6, 2))
    g[0, 0] = [0.7, -0.2]
    ga = pf.flow_affine_backward(g)
    assert np.array_equal(ga[0, 0], [0, 0, 0.7, 0, 0, -0.2])
    assert not pf.flow_affine_backward(np.zeros((5, 6, 2))).any()
    for _ in range(10):
        assert contract_check(pf.flow_affine, lambda x, g: pf.flow_affine_backward(g),
                              rng.normal(size=(8, 8, 6)), (8, 8, 2), rng, 1e-8)


def test_se2(rng):
    assert np.allclose(pf.flow_se2(np.zeros((3, 4, 3))), lattice(3, 4), atol=0)
    f = np.zeros((1, 2, 3))
    f[..., 0] = np.pi / 2
    assert np.allclose(pf.flow_se2(f)[0, 1], [0, 1], atol=1e-15)
    for _ in range(10):
        assert contract_check(pf.flow_se2, pf.flow_se2_backward, rng.normal(size=(8, 8, 3)), (8, 8, 2), rng, 1e-6)


def test_plane_disparity(rng):
    f = np.zeros((4, 5, 3))
    f[..., 2] = 5
    assert np.all(pf.plane_disparity(f) == 5)
    f = np.zeros((8, 4, 3))
    f[..., 0] = 1
    assert pf.plane_disparity(f)[7, 3] == 3
    for _ in range(10):
        assert contract_check(pf.plane_disparity, lambda x, g: pf.plane_disparity_backward(g),
                              rng.normal(size=(8, 8, 3)), (8, 8), rng, 1e-8)
    d = rng.normal(size=(8, 8))
    grid = pf.disparity_to_grid(d)
    assert np.array_equal(grid[..., 0], lattice(8, 8)[..., 0] - d)


def sim3_field(rng, shape=(8, 8)):
    f = rng.normal(size=shape + (7,))
    f[..., 6] = rng.uniform(0.3, 3, size=shape)
    return f


def test_pixel_sim3(rng):
    pts = rng.normal(size=(4, 5, 3))
    ident = np.zeros((4, 5, 7))
    ident[..., 6] = 1
    assert np.array_equal(pf.pixel_sim3(ident, pts), pts)
    ident[..., 6] = 2
    assert np.array_equal(pf.pixel_sim3(ident, pts), 2 * pts)
    p = np.concatenate([rng.normal(size=6), [1.7]])
    uniform = np.broadcast_to(p, (4, 5, 7))
    T = lie.sim3_forward(p)
    assert np.max(np.abs(pf.pixel_sim3(uniform, pts) - (pts @ T[:, :3].T + T[:, 3]))) < 1e-12
    bad = ident.copy()
    bad[2, 3, 6] = -1
    with pytest.raises(ParameterDomainError, match="row=2, col=3"):
        pf.pixel_sim3(bad, pts)
    for _ in range(10):
        f = sim3_field(rng)
        x = rng.normal(size=(8, 8, 3))
        g = rng.normal(size=(8, 8, 3))
        gf, gx = pf.pixel_sim3_backward(f, x, g)
        assert rel_err(gf, numeric_grad(lambda v: np.sum(g * pf.pixel_sim3(v, x)), f, 1e-5)) < 1e-6
        assert rel_err(gx, numeric_grad(lambda v: np.sum(g * pf.pixel_sim3(f, v)), x, 1e-5)) < 1e-6


def test_pixel_10dof(rng):
    x = rng.normal(size=(4, 5, 3))
    f = np.zeros((4, 5, 10))
    f[..., 9] = 1
    f[..., 3:6] = rng.normal(size=(4, 5, 3))
    f[..., 6:9] = rng.normal(size=(4, 5, 3))
    assert np.allclose(pf.pixel_10dof(f, x), x + f[..., 3:6], atol=1e-14)
    f = np.zeros((4, 5, 10))
    f[..., :3] = rng.normal(size=(4, 5, 3))
    f[..., 6:9] = x
    f[..., 9] = 1
    assert np.allclose(pf.pixel_10dof(f, x), x, atol=1e-14)
    s7 = sim3_field(rng, (4, 5))
    f10 = np.concatenate([s7[..., :6], np.zeros((4, 5, 3)), s7[..., 6:]], axis=-1)
    assert np.allclose(pf.pixel_10dof(f10, x), pf.pixel_sim3(s7, x), atol=1e-14)
    for _ in range(10):
        f = np.concatenate([rng.normal(size=(8, 8, 9)), rng.uniform(0.3, 3, size=(8, 8, 1))], axis=-1)
        x = rng.normal(size=(8, 8, 3))
        g = rng.normal(size=(8, 8, 3))
        gf, gx = pf.pixel_10dof_backward(f, x, g)
        assert rel_err(gf, numeric_grad(lambda v: np.sum(g * pf.pixel_10dof(v, x)), f, 1e-5)) < 1e-6
        assert rel_err(gx, numeric_grad(lambda v: np.sum(g * pf.pixel_10dof(f, v)), x, 1e-5)) < 1e-6


def test_smoothness_penalty(rng):
    cost, grad = pf.smoothness_penalty(np.ones((5, 6, 2)))
    assert cost == 0 and not grad.any()
    loss = RobustLoss("huber", 0.5)
    f = np.zeros((2, 2))
    f[0, 1] = 2.0  # right diff of row 0 is 2, down diff of col 1 is -2
    cost, _ = pf.smoothness_penalty(f, loss)
    assert np.isclose(cost, 2 * 0.5 * (2 - 0.25))
    f = rng.normal(size=(8, 8, 2))
    _, grad = pf.smoothness_penalty(f, loss)
    num = numeric_grad(lambda v: pf.smoothness_penalty(v, loss)[0], f, 1e-6)
    assert rel_err(grad, num) < 1e-6


def test_reuses_lattice_convention():
    K = camera.CameraIntrinsics(1, 1, 0, 0)
    rays = camera.ray_grid(3, 4, K)
    assert np.array_equal(rays[..., :2], lattice(3, 4))
