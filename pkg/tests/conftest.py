import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def numeric_grad(f, x, h):
    """Central differences, written independently of the package harness."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros(x.size)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(x.shape)


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    d = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if d == 0 else np.linalg.norm(a - b) / d
