"""Backend selection for the compiled kernels.

Set ``DPCONV_NO_NUMBA=1`` to force the pure-numpy code paths (useful for
debugging, or on platforms without an LLVM toolchain).
"""
import os

_DISABLED = os.environ.get("DPCONV_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old and numba warns on every launch
        numba.config.THREADING_LAYER = "workqueue"
    HAS_NUMBA = True

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)

    prange = numba.prange

except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # decorator used bare or with options; either way return the function
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def backend():
    return "numba" if HAS_NUMBA else "numpy"
