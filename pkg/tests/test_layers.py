import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullforge.net import layers
from hullforge.net.layers import (
    conv3d_backward,
    conv3d_forward,
    out_dims,
    relu,
    relu_backward,
    upsample2,
    upsample2_backward,
)


def conv_reference(x, w, b, stride):
    """Direct six-loop (per sample/channel) same-padded cross-correlation."""
    cout, cin, k = w.shape[:3]
    p = k // 2
    _, batch, dx, dy, dz = x.shape
    od = out_dims((dx, dy, dz), stride)
    out = np.zeros((cout, batch) + od)
    for n in range(batch):
        for co in range(cout):
            for ox in range(od[0]):
                for oy in range(od[1]):
                    for oz in range(od[2]):
                        acc = b[co]
                        for ci in range(cin):
                            for i in range(k):
                                for j in range(k):
                                    for l in range(k):
                                        xi, yi, zi = ox * stride + i - p, oy * stride + j - p, oz * stride + l - p
                                        if 0 <= xi < dx and 0 <= yi < dy and 0 <= zi < dz:
                                            acc += w[co, ci, i, j, l] * x[ci, n, xi, yi, zi]
                        out[co, n, ox, oy, oz] = acc
    return out


def test_identity_kernel(rng):
    x = rng.random((1, 6, 5, 4))
    w = np.zeros((1, 1, 3, 3, 3))
    w[0, 0, 1, 1, 1] = 1
    assert np.array_equal(conv3d_forward(x, w, np.zeros(1)), x)


def test_box_sum_interior():
    x = np.full((1, 5, 5, 5), 0.3)
    y = conv3d_forward(x, np.ones((1, 1, 3, 3, 3)), np.zeros(1))
    assert y[0, 2, 2, 2] == pytest.approx(27 * 0.3)


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("cin,cout", [(1, 1), (2, 3), (3, 1)])
def test_matches_reference_5cube(rng, stride, cin, cout):
    x = rng.standard_normal((cin, 2, 5, 5, 5))
    w = rng.standard_normal((cout, cin, 3, 3, 3))
    b = rng.standard_normal(cout)
    got = conv3d_forward(x, w, b, stride)
    assert got.shape[2:] == out_dims((5, 5, 5), stride)
    assert np.abs(got - conv_reference(x, w, b, stride)).max() <= 1e-6


def test_float32_path_close_to_reference(rng):
    x = rng.random((4, 1, 5, 5, 5)).astype(np.float32)
    w = rng.standard_normal((2, 4, 3, 3, 3)).astype(np.float32)
    b = np.zeros(2, np.float32)
    assert np.abs(conv3d_forward(x, w, b) - conv_reference(x, w, b, 1)).max() <= 1e-5


def test_chunked_blocks_equal_single_block(rng, monkeypatch):
    x = rng.standard_normal((3, 2, 9, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3, 3))
    b = rng.standard_normal(4)
    d = rng.standard_normal((4, 2, 9, 7, 6))
    whole = conv3d_forward(x, w, b), conv3d_backward(d, x, w)
    monkeypatch.setattr(layers, "_COLS_BYTES", 64)
    tiny = conv3d_forward(x, w, b), conv3d_backward(d, x, w)
    assert np.allclose(whole[0], tiny[0], rtol=1e-12, atol=1e-12)
    for a, c in zip(whole[1], tiny[1]):
        assert np.allclose(a, c, rtol=1e-12, atol=1e-12)


def test_linearity(rng):
    x1, x2 = rng.standard_normal((2, 2, 1, 4, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3, 3))
    z = np.zeros(2)
    lhs = conv3d_forward(2 * x1 - x2, w, z)
    rhs = 2 * conv3d_forward(x1, w, z) - conv3d_forward(x2, w, z)
    assert np.allclose(lhs, rhs)


def test_shape_errors(rng):
    with pytest.raises(ValueError, match="channel"):
        conv3d_forward(rng.random((2, 4, 4, 4)), rng.random((1, 3, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError, match="bias"):
        conv3d_forward(rng.random((1, 4, 4, 4)), rng.random((2, 1, 3, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError, match="odd"):
        conv3d_forward(rng.random((1, 4, 4, 4)), rng.random((1, 1, 2, 2, 2)), np.zeros(1))


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("cout", [1, 3])
def test_backward_is_adjoint(rng, stride, cout):
    # <conv(x), d> = <x, dx> and = <w, dw> + <b, db> for a linear map
    x = rng.standard_normal((2, 2, 6, 5, 4))
    w = rng.standard_normal((cout, 2, 3, 3, 3))
    b = rng.standard_normal(cout)
    y = conv3d_forward(x, w, b, stride)
    d = rng.standard_normal(y.shape)
    dx, dw, db = conv3d_backward(d, x, w, stride)
    ylin = conv3d_forward(x, w, np.zeros(cout), stride)
    assert np.sum(ylin * d) == pytest.approx(np.sum(x * dx), rel=1e-10)
    assert np.sum(ylin * d) == pytest.approx(np.sum(w * dw), rel=1e-10)
    assert np.sum(d.sum(axis=(1, 2, 3, 4)) * b) == pytest.approx(np.sum(db * b), rel=1e-10)


def test_direct_kernel_agrees_with_im2col(rng, monkeypatch):
    x = rng.random((4, 2, 8, 8, 8)).astype(np.float32)
    w = rng.standard_normal((1, 4, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(1).astype(np.float32)
    d = rng.standard_normal((1, 2, 8, 8, 8)).astype(np.float32)
    monkeypatch.setattr(layers, "USE_NUMBA", True)
    fast = conv3d_forward(x, w, b), conv3d_backward(d, x, w)
    monkeypatch.setattr(layers, "USE_NUMBA", False)
    slow = conv3d_forward(x, w, b), conv3d_backward(d, x, w)
    assert np.allclose(fast[0], slow[0], atol=1e-5)
    for a, c in zip(fast[1], slow[1]):
        assert np.allclose(a, c, atol=1e-4, rtol=1e-5)


def test_upsample_nearest_and_adjoint(rng):
    x = rng.standard_normal((2, 1, 3, 2, 4))
    u = upsample2(x)
    assert u.shape == (2, 1, 6, 4, 8)
    assert u[1, 0, 5, 3, 7] == x[1, 0, 2, 1, 3]
    d = rng.standard_normal(u.shape)
    assert np.sum(u * d) == pytest.approx(np.sum(x * upsample2_backward(d)))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=20))
def test_relu_pair(vals):
    v = np.array(vals)
    assert np.all(relu(v) >= 0)
    g = relu_backward(np.ones_like(v), v)
    assert np.array_equal(g, (v > 0).astype(float))
