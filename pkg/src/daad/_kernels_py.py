"""Pure-numpy implementations of the patch kernels.

These are the reference versions; ``_kernels_ext`` (Cython) must agree with
them bit-for-bit on the same inputs.
"""
import numpy as np


def im2col(x, kh, kw, stride, padding):
    """Unfold ``x`` (B, C, H, W) into rows of patches.

    Returns an array of shape (B*Ho*Wo, C*kh*kw); rows are ordered
    (b, ho, wo) and columns (c, i, j) to match an OIKK weight flatten.
    """
    b, c, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, ho, wo, c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        hs = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(kw):
            ws = slice(j, j + stride * (wo - 1) + 1, stride)
            cols[:, :, :, :, i, j] = x[:, :, hs, ws].transpose(0, 2, 3, 1)
    return cols.reshape(b * ho * wo, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, padding):
    """Adjoint of :func:`im2col`: scatter-add patch rows back into an image."""
    b, c, h, w = x_shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = cols.reshape(b, ho, wo, c, kh, kw)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        hs = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(kw):
            ws = slice(j, j + stride * (wo - 1) + 1, stride)
            out[:, :, hs, ws] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(out)


def maxpool_forward(x, window, stride):
    """Max over windows; returns (out, argmax) with argmax the flat in-window index.

    Ties resolve to the first index in row-major window order.
    """
    b, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = None
    arg = np.zeros((b, c, ho, wo), dtype=np.int32)
    for i in range(window):
        hs = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(window):
            ws = slice(j, j + stride * (wo - 1) + 1, stride)
            v = x[:, :, hs, ws]
            if out is None:
                out = v.copy()
                continue
            better = v > out
            out[better] = v[better]
            arg[better] = i * window + j
    return out, arg


def maxpool_backward(grad, arg, x_shape, window, stride):
    b, c, ho, wo = grad.shape
    dx = np.zeros(x_shape, dtype=grad.dtype)
    for i in range(window):
        hs = slice(i, i + stride * (ho - 1) + 1, stride)
        for j in range(window):
            ws = slice(j, j + stride * (wo - 1) + 1, stride)
            dx[:, :, hs, ws] += np.where(arg == i * window + j, grad, 0)
    return dx
