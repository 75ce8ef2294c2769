"""Backend selection for the numeric hot paths.

The compiled extension is preferred; set ``HIERSEG_PURE_PYTHON=1`` to force
the NumPy fallback (both produce the same results to within rounding).
"""
import os

from . import _pykernels

if os.environ.get("HIERSEG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
upsample_forward = _impl.upsample_forward
upsample_backward = _impl.upsample_backward
interp_matrix = _impl.interp_matrix
vote_counts = _impl.vote_counts
