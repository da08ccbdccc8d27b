"""Parameter containers and the small set of layers the networks are built from."""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Base container tracking named parameters, buffers and submodules.

    Names are dotted paths built from the attribute/registration keys, so a
    parameter registered as ``weight`` inside child ``0`` of child ``enc.1``
    is exported as ``enc.1.0.weight``.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{k}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, b in self._buffers.items():
            yield prefix + k, b
        for k, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{k}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own_p = dict(self.named_parameters())
        own_b = dict(self.named_buffers())
        missing = [k for k in list(own_p) + list(own_b) if k not in state]
        if strict and missing:
            raise KeyError(f"missing arrays in state: {', '.join(missing[:8])}")
        for name, p in own_p.items():
            if name in state:
                _copy_into(name, p.data, state[name])
        for name, b in own_b.items():
            if name in state:
                _copy_into(name, b, state[name])

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for module in self.modules():
            for k, b in module._buffers.items():
                module._buffers[k] = b.astype(dtype)
            module._sync_buffers()
        return self

    def _sync_buffers(self) -> None:
        """Hook for modules that mirror buffers in other objects."""

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def _copy_into(name: str, dst: np.ndarray, src: np.ndarray) -> None:
    if tuple(dst.shape) != tuple(src.shape):
        raise ValueError(f"shape mismatch for {name!r}: expected {dst.shape}, got {src.shape}")
    dst[...] = src


@contextlib.contextmanager
def frozen(*modules: Module) -> Iterator[None]:
    """Temporarily stop gradients from reaching the parameters of ``modules``."""
    params = [p for m in modules for p in m.parameters()]
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, r in zip(params, prev):
            p.requires_grad = r


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, gain: float = np.sqrt(2.0)) -> np.ndarray:
    std = gain / np.sqrt(fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True, rng: np.random.Generator | None = None, gain: float = np.sqrt(2.0)):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.weight = self.add_param("weight", kaiming_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, gain))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 2, stride: int = 2, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        fan_in = max(1, cin * kernel * kernel // (stride * stride))
        self.weight = self.add_param("weight", kaiming_normal(rng, (cin, cout, kernel, kernel), fan_in))
        self.bias = self.add_param("bias", np.zeros(cout, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        super().__init__()
        self.gamma = self.add_param("gamma", np.ones(channels, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(channels, dtype=np.float32))
        self.state = ops.BatchNormState(channels)
        self.add_buffer("running_mean", self.state.running_mean)
        self.add_buffer("running_var", self.state.running_var)

    def _sync_buffers(self) -> None:
        self.state.running_mean = self._buffers["running_mean"]
        self.state.running_var = self._buffers["running_var"]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.state, training=self.training)


class ConvBNAct(Module):
    """Conv (no bias) -> batchnorm -> activation.

    Parameters live flat on this module (``weight``, ``gamma``, ``beta``)
    so checkpoint names stay ``enc.{l}.{idx}.weight`` and so on.
    """

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, kernel: int = 3, stride: int = 1,
                 padding: int = 1, act: str = "relu", slope: float = 0.2):
        super().__init__()
        self.stride, self.padding, self.act, self.slope = stride, padding, act, slope
        gain = np.sqrt(2.0) if act == "relu" else np.sqrt(2.0 / (1 + slope * slope))
        self.weight = self.add_param("weight", kaiming_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, gain))
        self.gamma = self.add_param("gamma", np.ones(cout, dtype=np.float32))
        self.beta = self.add_param("beta", np.zeros(cout, dtype=np.float32))
        self.state = ops.BatchNormState(cout)
        self.add_buffer("running_mean", self.state.running_mean)
        self.add_buffer("running_var", self.state.running_var)

    def _sync_buffers(self) -> None:
        self.state.running_mean = self._buffers["running_mean"]
        self.state.running_var = self._buffers["running_var"]

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, None, self.stride, self.padding)
        y = ops.batchnorm2d(y, self.gamma, self.beta, self.state, training=self.training)
        return ops.elementwise(y, self.act, self.slope)


class ConvBNReLU(ConvBNAct):
    """3x3 same-padded ConvBNAct with ReLU."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__(cin, cout, rng)
