"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

Backend selection: env var ``FEDSCOPE_KERNELS`` set to ``numba`` or
``numpy``.  Unset picks numba when importable, else numpy.  The two paths
agree to floating-point roundoff (not bitwise: summation orders differ);
within one backend all kernels are bit-deterministic.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import os

from . import conv_numpy

_requested = os.environ.get("FEDSCOPE_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"FEDSCOPE_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = conv_numpy
    _backend = "numpy"
else:
    try:
        from . import conv_numba as _impl  # noqa: F401
        _backend = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = conv_numpy
        _backend = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _backend
