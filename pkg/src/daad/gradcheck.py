"""Central finite-difference checks of the autodiff gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def _scalar(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is None:
        return out.sum()
    return (out * Tensor(weights.astype(out.dtype))).sum()


def analytic_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                   weights: np.ndarray | None = None) -> list[np.ndarray]:
    leaves = [Tensor(a.copy(), requires_grad=True, dtype=a.dtype) for a in arrays]
    _scalar(fn(*leaves), weights).backward()
    return [lf.grad if lf.grad is not None else np.zeros_like(lf.data) for lf in leaves]


def numeric_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float,
                  weights: np.ndarray | None = None) -> list[np.ndarray]:
    """Central differences of ``sum(weights * fn(*arrays))``, evaluated in the arrays' dtype."""
    arrays = [a.copy() for a in arrays]

    def value() -> float:
        # the op runs in the arrays' dtype; the contraction is done in float64 so
        # that it adds no rounding of its own to the difference quotient
        out = fn(*[Tensor(a, dtype=a.dtype) for a in arrays]).data.astype(np.float64)
        return float(np.sum(out if weights is None else out * weights.astype(np.float64)))

    grads = []
    for a in arrays:
        g = np.zeros(a.shape, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = value()
            flat[i] = orig - h
            fm = value()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)`` with a floor to handle all-zero gradients."""
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float | None = None,
          seed: int = 0) -> float:
    """Largest relative error over all inputs between analytic and numeric gradients.

    The output is contracted against fixed zero-mean random weights so every
    output element contributes with a distinct coefficient and outputs that
    sum to a constant (softmax, batchnorm) still carry a signal.
    """
    dtype = arrays[0].dtype
    if h is None:
        h = 1e-6 if dtype == np.float64 else 1e-2
    probe = fn(*[Tensor(a, dtype=a.dtype) for a in arrays])
    weights = np.random.default_rng([seed, 0x5EED]).standard_normal(probe.shape).astype(dtype)
    ana = analytic_grads(fn, arrays, weights)
    num = numeric_grads(fn, arrays, h, weights)
    return max(relative_error(a, n) for a, n in zip(ana, num))
