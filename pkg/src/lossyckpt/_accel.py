"""Numba switch.

Kernels in :mod:`lossyckpt.kernels` come in pairs: a loop version compiled
with numba and a vectorised pure-numpy version. The numba path is used when
numba imports cleanly and ``LOSSYCKPT_DISABLE_NUMBA`` is unset (or "0").
"""
import os

_FLAG = "LOSSYCKPT_DISABLE_NUMBA"


def _disabled_by_env():
    return os.environ.get(_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


try:
    import numba as _numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _disabled_by_env()


def njit(func):
    """Compile ``func`` in nopython mode if numba is importable.

    No fastmath: the numba kernels must round exactly like their numpy twins.
    """
    if not HAS_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)
