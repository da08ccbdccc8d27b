"""Patch kernels used by convolution and pooling.

The compiled extension is used when it was built and imports cleanly;
otherwise the numpy implementation is used. Set ``DAAD_PURE_PYTHON=1`` to
force the fallback.
"""
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DAAD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable; using numpy fallback")
        _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_forward", "maxpool_backward"]
