"""JIT switch for the numeric kernels.

Kernels are written in a numba-compatible subset of numpy.  Setting
``PULSESHAPER_JIT=0`` in the environment (before import) runs the very same
functions as plain Python/numpy, which is slow but handy for debugging and
for checking the compiled path against an uncompiled one.
"""

import os

_FLAG = os.environ.get("PULSESHAPER_JIT", "1").strip().lower()
JIT_ENABLED = _FLAG not in ("0", "false", "no", "off")

if JIT_ENABLED:
    try:
        import numba
    except ImportError:  # pragma: no cover
        JIT_ENABLED = False


def njit(*args, **kwargs):
    """``numba.njit(nogil=True)`` when enabled, identity decorator otherwise."""
    if JIT_ENABLED:
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
