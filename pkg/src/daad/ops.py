"""Differentiable operations on :class:`~daad.tensor.Tensor`.

Every function here takes tensors (or array-likes for constants), computes
the forward value with numpy and records a backward closure. Only the
operator set needed by the generator, discriminator and losses is provided.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
COSINE_EPS = 1e-8


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2 * xd * g,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_node(out, (x,), lambda g: (g / (2 * out),))


def log(x: Tensor, eps: float = 0.0) -> Tensor:
    """Natural log; with ``eps > 0`` the input is clamped from below first."""
    xd = x.data
    clamped = np.maximum(xd, eps) if eps > 0 else xd
    out = np.log(clamped)

    def backward(g):
        gx = g / clamped
        if eps > 0:
            gx = np.where(xd >= eps, gx, 0).astype(xd.dtype)
        return (gx,)

    return make_node(out, (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return make_node(ad @ bd, (a, b), backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype, copy=True),)

    return make_node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / n).astype(x.dtype),)

    return make_node(np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                     lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis)
                     for k in range(len(tensors)))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along channels."""
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels expects NCHW tensors")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}")
    if b.shape[1] == 0:
        return a
    if a.shape[1] == 0:
        return b
    return concat([a, b], axis=1)


# -- elementwise nonlinearities ---------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, 1.0, slope).astype(x.dtype)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # two-branch form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(xd.dtype)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1 - out * out),))


def elementwise(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch by name: ``relu``, ``leaky_relu``, ``sigmoid``, ``tanh`` or ``none``."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown elementwise kind {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = COSINE_EPS) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``; a zero vector maps to zero."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = xd / denom
    active = norm > eps

    def backward(g):
        radial = (g * out).sum(axis=axis, keepdims=True)
        gx = np.where(active, (g - out * radial) / denom, g / denom)
        return (gx.astype(xd.dtype),)

    return make_node(out, (x,), backward)


def cosine_similarity_matrix(q: Tensor, m: Tensor, eps: float = COSINE_EPS) -> Tensor:
    """Pairwise cosine similarities between rows of ``q`` (P, D) and ``m`` (N, D)."""
    if q.shape[-1] != m.shape[-1]:
        raise ValueError(f"cosine similarity: dimension mismatch {q.shape[-1]} vs {m.shape[-1]}")
    return matmul(l2_normalize(q, eps=eps), transpose(l2_normalize(m, eps=eps), (1, 0)))


def cosine_similarity(a, b, eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity of two length-D vectors (zero vectors give 0)."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = cosine_similarity_matrix(reshape(a, (1, -1)), reshape(b, (1, -1)), eps)
    return reshape(out, ())


# -- convolution / pooling ---------------------------------------------------

def _check_conv(x: Tensor, w: Tensor, padding: int):
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got shape {x.shape}")
    if w.ndim != 4:
        raise ValueError(f"conv2d: weight must be OIKK, got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input channels {x.shape[1]} != weight in-channels {w.shape[1]}")
    kh, kw = w.shape[2:]
    if x.shape[2] + 2 * padding < kh:
        raise ValueError(f"conv2d: height {x.shape[2]} + 2*{padding} smaller than kernel {kh}")
    if x.shape[3] + 2 * padding < kw:
        raise ValueError(f"conv2d: width {x.shape[3]} + 2*{padding} smaller than kernel {kw}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and OIKK weight."""
    _check_conv(x, weight, padding)
    b, _, h, w = x.shape
    o, _, kh, kw = weight.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(o, -1)
    rows = cols @ wmat.T
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
        rows += bias.data
    out = np.ascontiguousarray(rows.reshape(b, ho, wo, o).transpose(0, 3, 1, 2))
    x_shape = x.shape

    def backward(g):
        grows = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (grows.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gx = kernels.col2im(grows @ wmat, x_shape, kh, kw, stride, padding) if x.requires_grad else None
        gb = grows.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, padding: int = 0) -> Tensor:
    """Transposed convolution; weight layout (C_in, C_out, K, K)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv_transpose2d expects NCHW input and (Cin, Cout, K, K) weight")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv_transpose2d: input channels {x.shape[1]} != weight in-channels {weight.shape[0]}")
    b, cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    ho = (h - 1) * stride + kh - 2 * padding
    wo = (w - 1) * stride + kw - 2 * padding
    out_shape = (b, cout, ho, wo)
    xrows = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    out = kernels.col2im(xrows @ wmat, out_shape, kh, kw, stride, padding)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        gcols = kernels.im2col(np.ascontiguousarray(g), kh, kw, stride, padding)
        gx = None
        if x.requires_grad:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2))
        gw = (xrows.T @ gcols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"maxpool2d: input must be NCHW, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % stride or w % stride:
        raise ValueError(f"maxpool2d: spatial extent {h}x{w} not divisible by stride {stride}")
    out, arg = kernels.maxpool_forward(x.data, window, stride)
    x_shape = x.shape
    return make_node(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, x_shape, window, stride),))


class BatchNormState:
    """Running statistics for one batchnorm layer."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool = True) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batchnorm2d: shape mismatch input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    c = xd.shape[1]
    gd = gamma.data.reshape(1, c, 1, 1)
    if training:
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu = xd.mean(axis=(0, 2, 3), keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv_std
        m = state.momentum
        unbiased = var.reshape(c) * (n / max(n - 1, 1))
        state.running_mean[...] = (1 - m) * state.running_mean + m * mu.reshape(c)
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).reshape(1, c, 1, 1).astype(xd.dtype)
        xhat = (xd - state.running_mean.reshape(1, c, 1, 1)) * inv_std
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)
    out = out.astype(xd.dtype, copy=False)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            if training:
                gx = inv_std * (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                                - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            else:
                gx = gxhat * inv_std
            gx = gx.astype(xd.dtype, copy=False)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), backward)
