"""Convolution kernels with a compiled core and a numpy fallback.

The compiled extension is used when importable, unless the environment
variable ``EXITWISE_PURE_PYTHON`` is set to a non-empty value other than
``0``. ``BACKEND`` names the active implementation.
"""
import os
from contextlib import contextmanager

from . import _conv_py as python

_force_pure = os.environ.get("EXITWISE_PURE_PYTHON", "") not in ("", "0")

compiled = None
if not _force_pure:
    try:
        from . import _conv as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


@contextmanager
def flush_denormals():
    """Flush subnormal floats to zero in this thread while the block runs.

    Only the compiled backend can switch the mode; otherwise a no-op.
    """
    if compiled is None:
        yield
        return
    mode = compiled.fast_fp_enter()
    try:
        yield
    finally:
        compiled.fast_fp_exit(mode)


__all__ = ["BACKEND", "compiled", "python", "conv2d_forward", "conv2d_backward",
           "flush_denormals"]
