"""Divide-and-assemble anomaly detection: block-wise memory autoencoders."""
from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import Tensor, no_grad, set_debug

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "set_debug", "KERNEL_BACKEND", "__version__"]
