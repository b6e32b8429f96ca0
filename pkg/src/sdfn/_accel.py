"""Numba switch.

Set ``SDFN_DISABLE_NUMBA=1`` to force the pure-numpy kernels. ``SDFN_THREADS``
caps numba's worker pool.
"""
import os

_FLAG = os.environ.get("SDFN_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    The kernels are always compiled when numba exists so the benchmark and the
    equivalence tests can reach both paths; ``USE_NUMBA`` only decides which
    one the public dispatchers call.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def apply_thread_cap():
    value = os.environ.get("SDFN_THREADS")
    if not value or not HAVE_NUMBA:
        return
    n = max(1, min(int(value), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
