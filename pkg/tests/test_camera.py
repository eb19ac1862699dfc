import numpy as np
import pytest

from geowarp import camera, lie
from geowarp.camera import CameraIntrinsics, DepthSingularityError, InvalidDepthError

from conftest import numeric_grad, rel_err

KINECT = CameraIntrinsics(525.0, 525.0, 319.5, 239.5)
UNIT = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)


def test_project_examples():
    assert np.array_equal(camera.project([2, 4, 2], UNIT), [1, 2])
    assert np.array_equal(camera.project([0, 0, 1], KINECT), [319.5, 239.5])
    with pytest.raises(DepthSingularityError, match="1e-09"):
        camera.project([1, 1, 1e-9], UNIT)


def test_project_backward_examples(rng):
    assert np.array_equal(camera.project_backward([0, 0, 1], UNIT, [0.3, -0.7]), [0.3, -0.7, 0])
    assert np.array_equal(camera.project_backward([0.4, -0.7, 2], KINECT, [0, 0]), np.zeros(3))
    p = np.array([0.4, -0.7, 2.0])
    g = rng.normal(size=2)
    num = numeric_grad(lambda x: g @ camera.project(x, KINECT), p, 1e-6)
    assert rel_err(camera.project_backward(p, KINECT, g), num) < 1e-6


def test_project_backward_fd_many(rng):
    pts = np.concatenate([rng.uniform(-3, 3, size=(1000, 2)), rng.uniform(0.1, 10, size=(1000, 1))], axis=1)
    for p in pts:
        g = rng.normal(size=2)
        num = numeric_grad(lambda x: g @ camera.project(x, KINECT), p, 1e-6 * p[2])
        assert rel_err(camera.project_backward(p, KINECT, g), num) < 1e-6


def test_inverse_project_examples():
    assert np.array_equal(camera.inverse_project([319.5, 239.5], 3.0, KINECT), [0, 0, 3])
    p = camera.inverse_project([419.5, 239.5], 2.0, KINECT)
    assert np.allclose(p, [100 / 525 * 2, 0, 2], atol=1e-15)
    assert abs(p[0] - 0.38095) < 1e-5
    for d in (0.0, -1.0):
        with pytest.raises(InvalidDepthError):
            camera.inverse_project([1, 1], d, KINECT)


def test_inverse_project_linear_in_depth(rng):
    for _ in range(100):
        x = rng.uniform(0, 640, size=2)
        d = rng.uniform(0.1, 5)
        assert np.array_equal(camera.inverse_project(x, 2 * d, KINECT), 2 * camera.inverse_project(x, d, KINECT))


def test_round_trip(rng):
    for _ in range(2000):
        x = rng.uniform([0, 0], [639, 479])
        d = rng.uniform(0.1, 10)
        assert np.max(np.abs(camera.project(camera.inverse_project(x, d, KINECT), KINECT) - x)) < 1e-9


def test_intrinsics_validation_and_text():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0)
    K = CameraIntrinsics.from_string("525 525.5 319.5 239.5\n")
    assert K == CameraIntrinsics(525.0, 525.5, 319.5, 239.5)
    assert CameraIntrinsics.from_string(K.to_string()) == K
    with pytest.raises(ValueError):
        CameraIntrinsics.from_string("1 2 3")


def test_grid_generator_examples():
    pts, valid = camera.grid_generator_3d(np.ones((1, 1)), UNIT, lie.se3_forward(np.zeros(6)))
    assert np.array_equal(pts[0, 0], [0, 0, 1]) and valid.all()
    pts, _ = camera.grid_generator_3d(np.ones((3, 4)), KINECT, lie.se3_forward([0, 0, 0, 0, 0, 1]))
    assert np.all(pts[..., 2] == 2)


def test_grid_generator_matches_pointwise(rng):
    K = CameraIntrinsics(30, 32, 3.2, 2.7)
    depth = rng.uniform(0.5, 4, size=(5, 6))
    depth[1, 2] = 0.0
    T = lie.se3_forward(rng.normal(size=6))
    pts, valid = camera.grid_generator_3d(depth, K, T)
    for r in range(5):
        for c in range(6):
            if depth[r, c] == 0:
                assert not valid[r, c] and np.all(pts[r, c] == 0)
                continue
            p = camera.inverse_project([c, r], depth[r, c], K)
            assert np.allclose(pts[r, c], T[:, :3] @ p + T[:, 3], atol=1e-14)


def test_identity_grid_reprojects_to_lattice(rng):
    depth = rng.uniform(0.1, 10, size=(12, 15))
    pts, _ = camera.grid_generator_3d(depth, KINECT, lie.se3_forward(np.zeros(6)))
    pix, valid = camera.project_points(pts, KINECT)
    cols, rows = np.meshgrid(np.arange(15), np.arange(12))
    assert valid.all()
    assert np.max(np.abs(pix - np.stack([cols, rows], -1))) < 1e-9


def test_grid_generator_backward(rng):
    K = CameraIntrinsics(30, 32, 1.5, 1.5)
    depth = rng.uniform(0.5, 3, size=(4, 4))
    T = lie.se3_forward(rng.normal(size=6))
    g = rng.normal(size=(4, 4, 3))
    gT, gd = camera.grid_generator_3d_backward(depth, K, T, np.zeros((4, 4, 3)))
    assert not gT.any() and not gd.any()
    gT, gd = camera.grid_generator_3d_backward(depth, K, T, g)
    nT = numeric_grad(lambda t: np.sum(g * camera.grid_generator_3d(depth, K, t)[0]), T, 1e-6)
    nd = numeric_grad(lambda d: np.sum(g * camera.grid_generator_3d(d, K, T)[0]), depth, 1e-6)
    assert rel_err(gT, nT) < 1e-6 and rel_err(gd, nd) < 1e-6
    # a single pixel gives one outer product
    d1 = np.array([[2.0]])
    g1 = rng.normal(size=(1, 1, 3))
    gT, _ = camera.grid_generator_3d_backward(d1, K, T, g1)
    hom = np.append(camera.inverse_project([0, 0], 2.0, K), 1.0)
    assert np.allclose(gT, np.outer(g1[0, 0], hom), atol=1e-15)


def test_points_behind_camera_are_flagged(rng):
    pts = np.array([[[0.1, 0.2, 1.0], [0.1, 0.2, 1e-9], [0.3, 0.1, -2.0]]])
    pix, valid = camera.project_points(pts, KINECT)
    assert valid.tolist() == [[True, False, False]]
    g = camera.project_points_backward(pts, KINECT, np.ones((1, 3, 2)), valid)
    assert np.all(g[0, 1:] == 0)
