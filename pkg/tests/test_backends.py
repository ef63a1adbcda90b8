"""Compiled kernels against the numpy fallback on identical inputs."""
import os
import subprocess
import sys

import numpy as np
import pytest

from poolskip import backend

pytestmark = pytest.mark.skipif("compiled" not in backend.available(),
                                reason="compiled extension not built")

py = backend.get("python")


@pytest.fixture
def cy():
    return backend.get("compiled")


@pytest.mark.parametrize("shape, m, stride", [
    ((1, 1, 5, 5), 1, 1), ((2, 3, 9, 7), 3, 1), ((3, 4, 11, 11), 5, 2), ((1, 2, 8, 8), 3, 3),
])
def test_conv_parity(cy, rng, shape, m, stride):
    x = rng.normal(size=shape)
    w = rng.normal(size=(5, shape[1], m, m))
    a = cy.conv2d_forward(x, w, stride)
    np.testing.assert_allclose(a, py.conv2d_forward(x, w, stride), rtol=1e-12, atol=1e-12)
    g = rng.normal(size=a.shape)
    for u, v in zip(cy.conv2d_backward(x, w, g, stride), py.conv2d_backward(x, w, g, stride)):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("e", [1, 2, 3])
def test_pool_parity(cy, rng, e):
    y = rng.integers(0, 3, size=(2, 3, 6, 12)).astype(float)  # plenty of ties
    a1, r1, c1 = cy.maxpool_forward(y, e)
    a2, r2, c2 = py.maxpool_forward(y, e)
    assert np.array_equal(a1, a2) and np.array_equal(r1, r2) and np.array_equal(c1, c2)
    u1 = cy.maxunpool_forward(a1, r1, c1, e)
    u2 = py.maxunpool_forward(a2, r2, c2, e)
    assert np.array_equal(u1, u2)


def test_env_var_forces_python():
    code = "from poolskip import backend; print(backend.NAME)"
    env = dict(os.environ, POOLSKIP_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "python"
    env["POOLSKIP_BACKEND"] = "bogus"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "bogus" in out.stderr
