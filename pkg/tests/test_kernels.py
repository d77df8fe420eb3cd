import os
import subprocess
import sys

import numpy as np
import pytest

from gamerl import _jit
from gamerl.kernels import adam_update, col2im, im2col, rasterize


def _direct_conv(x, w):
    """Same-padded 3x3 convolution by explicit loops (channels-last input)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((B, H, W, w.shape[0]))
    for o in range(w.shape[0]):
        for ky in range(3):
            for kx in range(3):
                out[..., o] += (xp[:, ky : ky + H, kx : kx + W, :] * w[o, :, ky, kx]).sum(-1)
    return out


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_im2col_matches_direct_convolution(backend):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 6, 3))
    w = rng.normal(size=(4, 3, 3, 3))
    cols = im2col(x, 3, backend=backend)
    got = (cols @ w.reshape(4, -1).T).reshape(2, 5, 6, 4)
    assert np.allclose(got, _direct_conv(x, w))


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_col2im_is_adjoint(backend):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 4, 3))
    y = rng.normal(size=(2 * 4 * 4, 27))
    lhs = (im2col(x, backend=backend) * y).sum()
    rhs = (x * col2im(y, x.shape, backend=backend)).sum()
    assert np.isclose(lhs, rhs)


def test_unfolding_backends_identical():
    x = np.random.default_rng(2).normal(size=(3, 10, 10, 16)).astype(np.float32)
    a, b = im2col(x, backend="numba"), im2col(x, backend="numpy")
    assert np.array_equal(a, b)
    assert np.array_equal(col2im(a, x.shape, backend="numba"), col2im(a, x.shape, backend="numpy"))


def test_rasterize_backends_identical():
    rng = np.random.default_rng(3)
    T = 40
    sx, sy = rng.uniform(-30, 30, (T, 3)), rng.uniform(-30, 30, (T, 3))
    sz = rng.uniform(-1, 1, (T, 3))
    colors = rng.integers(0, 255, (T, 3), dtype=np.uint8)
    a = rasterize(sx, sy, sz, colors, 64, (128, 128, 128), backend="numba")
    b = rasterize(sx, sy, sz, colors, 64, (128, 128, 128), backend="numpy")
    assert np.array_equal(a, b)


def test_rasterize_depth_test():
    # two overlapping squares-as-triangle-pairs; the nearer one (larger z) wins
    tri = np.array([[-10.0, 10.0, -10.0], [-10.0, -10.0, 10.0]])
    sx = np.stack([tri[0], tri[0]])
    sy = np.stack([tri[1], tri[1]])
    sz = np.array([[0.0] * 3, [1.0] * 3])
    colors = np.array([[255, 0, 0], [0, 255, 0]], np.uint8)
    for order in ([0, 1], [1, 0]):
        img = rasterize(sx[order], sy[order], sz[order], colors[order], 32, (0, 0, 0))
        assert tuple(img[18, 12]) == (0, 255, 0)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_adam_backends_agree(dtype):
    rng = np.random.default_rng(4)
    p0 = rng.normal(size=500).astype(dtype)
    runs = []
    for backend in ("numba", "numpy"):
        p, m, v = p0.copy(), np.zeros_like(p0), np.zeros_like(p0)
        for t in range(1, 40):
            g = np.sin(p0 * t).astype(dtype)
            adam_update(p, g, m, v, 0.9, 0.999, 1e-3, t, 1e-8, backend=backend)
        runs.append(p)
    tol = 1e-6 if dtype == np.float32 else 1e-12
    assert np.allclose(runs[0], runs[1], rtol=0, atol=tol)


def test_adam_flushes_tiny_moments():
    p = np.ones(3)
    m = np.array([1e-31, 0.0, 1.0])
    v = np.array([1e-31, 0.0, 1.0])
    adam_update(p, np.zeros(3), m, v, 0.9, 0.999, 1e-3, 5, 1e-8)
    assert m[0] == 0.0 and v[0] == 0.0 and m[2] > 0


def test_unknown_backend():
    with pytest.raises(ValueError):
        im2col(np.zeros((1, 3, 3, 1)), backend="cuda")


def test_env_var_disables_numba():
    code = "from gamerl import _jit; print(_jit.USE_NUMBA)"
    env = dict(os.environ, GAMERL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
    assert _jit.USE_NUMBA == (os.environ.get("GAMERL_DISABLE_NUMBA", "") not in ("1", "true", "yes", "on"))
