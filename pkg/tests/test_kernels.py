"""The compiled kernels must agree bit-for-bit with the numpy fallback."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daad import _kernels_py as py
from daad import kernels

ext = pytest.importorskip("daad._kernels_ext", reason="compiled kernels not built")

dtypes = st.sampled_from([np.float32, np.float64])


@st.composite
def conv_case(draw):
    k = draw(st.integers(1, 4))
    stride = draw(st.integers(1, 3))
    padding = draw(st.integers(0, 2))
    h = draw(st.integers(max(1, k - 2 * padding), 9))
    w = draw(st.integers(max(1, k - 2 * padding), 9))
    shape = (draw(st.integers(1, 3)), draw(st.integers(1, 4)), h, w)
    seed = draw(st.integers(0, 2 ** 31))
    return shape, k, stride, padding, draw(dtypes), seed


def test_dispatch_uses_extension():
    assert kernels.BACKEND == "cython"


@settings(max_examples=100, deadline=None)
@given(conv_case())
def test_im2col_col2im_parity(case):
    shape, k, stride, padding, dtype, seed = case
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(dtype)
    a, b = py.im2col(x, k, k, stride, padding), ext.im2col(x, k, k, stride, padding)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    np.testing.assert_array_equal(py.col2im(cols, shape, k, k, stride, padding),
                                  ext.col2im(cols, shape, k, k, stride, padding))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(2, 8), st.integers(2, 8), dtypes,
       st.booleans(), st.integers(0, 2 ** 31))
def test_maxpool_parity(b, c, h, w, dtype, ties, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((b, c, h, w))
    if ties:
        x = np.round(x)  # many equal values inside windows
    x = x.astype(dtype)
    out_a, arg_a = py.maxpool_forward(x, 2, 2)
    out_b, arg_b = ext.maxpool_forward(x, 2, 2)
    np.testing.assert_array_equal(out_a, out_b)
    np.testing.assert_array_equal(arg_a, arg_b)
    g = rng.standard_normal(out_a.shape).astype(dtype)
    np.testing.assert_array_equal(py.maxpool_backward(g, arg_a, x.shape, 2, 2),
                                  ext.maxpool_backward(g, arg_b, x.shape, 2, 2))


def test_im2col_matches_direct_patches():
    x = np.arange(2 * 2 * 4 * 4, dtype=np.float64).reshape(2, 2, 4, 4)
    cols = kernels.im2col(x, 3, 3, 1, 1)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for bi in range(2):
        for i in range(4):
            for j in range(4):
                np.testing.assert_array_equal(cols[bi * 16 + i * 4 + j], padded[bi, :, i:i + 3, j:j + 3].ravel())


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 7, 6))
    cols = kernels.im2col(x, 3, 3, 2, 1)
    y = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * kernels.col2im(y, x.shape, 3, 3, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_maxpool_ties_pick_first_index():
    x = np.zeros((1, 1, 2, 2), np.float32)
    out, arg = kernels.maxpool_forward(x, 2, 2)
    assert out[0, 0, 0, 0] == 0 and arg[0, 0, 0, 0] == 0
    dx = kernels.maxpool_backward(np.ones((1, 1, 1, 1), np.float32), arg, x.shape, 2, 2)
    assert dx.ravel().tolist() == [1, 0, 0, 0]
