"""Adam with bias correction."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One in-place Adam update of ``param`` at step ``t`` (1-based)."""
    b1, b2 = betas
    if weight_decay:
        grad = grad + weight_decay * param
    m *= b1
    m += (1 - b1) * grad
    v *= b2
    v += (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)


class Adam:
    """Adam over a named parameter set; parameters without a gradient are skipped
    (treated as zero gradient for the moment estimates)."""

    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params: dict[str, Tensor] = dict(named_params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, g, self.m[k], self.v[k], self.t, self.lr, self.betas, self.eps, self.weight_decay)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str, t: int) -> None:
        for k in self.params:
            self.m[k][...] = arrays[f"{prefix}.m.{k}"]
            self.v[k][...] = arrays[f"{prefix}.v.{k}"]
        self.t = int(t)
