"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. Set ``GCPRUNE_KERNELS=python`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("GCPRUNE_KERNELS", "").lower() in ("python", "py", "numpy"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
mish_forward = _impl.mish_forward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_forward", "maxpool_backward", "mish_forward"]
