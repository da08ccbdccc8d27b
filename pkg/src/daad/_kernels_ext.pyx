# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch kernels; same contracts and summation order as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def _im2col(floating[:, :, :, ::1] x, floating[:, ::1] cols,
            int kh, int kw, int stride, int padding, int ho, int wo):
    cdef Py_ssize_t b, c, oh, ow, i, j, hi, wi, row, col
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    with nogil:
        for b in range(B):
            for oh in range(ho):
                for ow in range(wo):
                    row = (b * ho + oh) * wo + ow
                    col = 0
                    for c in range(C):
                        for i in range(kh):
                            hi = oh * stride + i - padding
                            for j in range(kw):
                                wi = ow * stride + j - padding
                                if 0 <= hi < H and 0 <= wi < W:
                                    cols[row, col] = x[b, c, hi, wi]
                                else:
                                    cols[row, col] = 0
                                col = col + 1


def im2col(x, int kh, int kw, int stride, int padding):
    x = np.ascontiguousarray(x)
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ho = (h + 2 * padding - kh) // stride + 1
    cdef int wo = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((b * ho * wo, c * kh * kw), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, padding, ho, wo)
    return cols


def _col2im(floating[:, ::1] cols, floating[:, :, :, ::1] out,
            int kh, int kw, int stride, int padding, int ho, int wo):
    # out is NHWC here; the caller transposes back
    cdef Py_ssize_t b, c, oh, ow, i, j, hi, wi, row, base
    cdef Py_ssize_t B = out.shape[0], H = out.shape[1], W = out.shape[2], C = out.shape[3]
    cdef Py_ssize_t kk = kh * kw
    with nogil:
        # (i, j) outermost keeps per-pixel accumulation order identical to the numpy path
        for i in range(kh):
            for j in range(kw):
                for b in range(B):
                    for oh in range(ho):
                        hi = oh * stride + i - padding
                        if hi < 0 or hi >= H:
                            continue
                        for ow in range(wo):
                            wi = ow * stride + j - padding
                            if wi < 0 or wi >= W:
                                continue
                            row = (b * ho + oh) * wo + ow
                            base = i * kw + j
                            for c in range(C):
                                out[b, hi, wi, c] += cols[row, c * kk + base]


def col2im(cols, x_shape, int kh, int kw, int stride, int padding):
    cols = np.ascontiguousarray(cols)
    cdef int b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef int ho = (h + 2 * padding - kh) // stride + 1
    cdef int wo = (w + 2 * padding - kw) // stride + 1
    cols = cols.reshape(b * ho * wo, c * kh * kw)
    out = np.zeros((b, h, w, c), dtype=cols.dtype)
    _col2im(cols, out, kh, kw, stride, padding, ho, wo)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _maxpool_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out, int[:, :, :, ::1] arg,
                 int window, int stride):
    cdef Py_ssize_t b, c, oh, ow, i, j, best_idx
    cdef floating best, v
    cdef Py_ssize_t B = out.shape[0], C = out.shape[1], HO = out.shape[2], WO = out.shape[3]
    with nogil:
        for b in range(B):
            for c in range(C):
                for oh in range(HO):
                    for ow in range(WO):
                        best = x[b, c, oh * stride, ow * stride]
                        best_idx = 0
                        for i in range(window):
                            for j in range(window):
                                v = x[b, c, oh * stride + i, ow * stride + j]
                                if v > best:
                                    best = v
                                    best_idx = i * window + j
                        out[b, c, oh, ow] = best
                        arg[b, c, oh, ow] = <int>best_idx


def maxpool_forward(x, int window, int stride):
    x = np.ascontiguousarray(x)
    cdef int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int ho = (h - window) // stride + 1
    cdef int wo = (w - window) // stride + 1
    out = np.empty((b, c, ho, wo), dtype=x.dtype)
    arg = np.empty((b, c, ho, wo), dtype=np.int32)
    _maxpool_fwd(x, out, arg, window, stride)
    return out, arg


def _maxpool_bwd(floating[:, :, :, ::1] grad, int[:, :, :, ::1] arg, floating[:, :, :, ::1] dx,
                 int window, int stride):
    cdef Py_ssize_t b, c, oh, ow, a
    cdef Py_ssize_t B = grad.shape[0], C = grad.shape[1], HO = grad.shape[2], WO = grad.shape[3]
    with nogil:
        for b in range(B):
            for c in range(C):
                for oh in range(HO):
                    for ow in range(WO):
                        a = arg[b, c, oh, ow]
                        dx[b, c, oh * stride + a // window, ow * stride + a % window] += grad[b, c, oh, ow]


def maxpool_backward(grad, arg, x_shape, int window, int stride):
    grad = np.ascontiguousarray(grad)
    arg = np.ascontiguousarray(arg, dtype=np.int32)
    dx = np.zeros(tuple(x_shape), dtype=grad.dtype)
    _maxpool_bwd(grad, arg, dx, window, stride)
    return dx
