"""Backend selection for the hot FEM kernels.

Numba is used when importable unless ``EMBHOM_NO_NUMBA=1`` is set, in which
case every kernel falls back to its pure-numpy implementation.
"""

import os

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def use_numba():
    """True when the numba kernels are active for this process."""
    flag = os.environ.get("EMBHOM_NO_NUMBA", "").strip().lower()
    return HAVE_NUMBA and flag not in ("1", "true", "yes")


def max_workers():
    """Worker cap from ``HOMOG_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("HOMOG_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


__all__ = ["njit", "use_numba", "max_workers", "HAVE_NUMBA"]
