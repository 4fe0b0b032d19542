"""Numba toggle.

Set ``MODSBSG_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""
import os

_flag = os.environ.get("MODSBSG_DISABLE_NUMBA", "").strip().lower()
DISABLED = _flag not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _numba_njit
    HAS_NUMBA = True
except ImportError:
    _numba_njit = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAS_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend():
    return "numba" if HAS_NUMBA else "numpy"
