"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is used. Setting ``SELFSTOP_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("SELFSTOP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback

upsample2x_forward = _impl.upsample2x_forward
upsample2x_backward = _impl.upsample2x_backward
norm_forward = _impl.norm_forward
norm_backward = _impl.norm_backward
im2col = _impl.im2col
col2im = _impl.col2im
up_relu_norm_forward = _impl.up_relu_norm_forward
up_relu_norm_backward = _impl.up_relu_norm_backward

__all__ = [
    "BACKEND",
    "upsample2x_forward",
    "upsample2x_backward",
    "norm_forward",
    "norm_backward",
    "im2col",
    "col2im",
    "up_relu_norm_forward",
    "up_relu_norm_backward",
]
