"""Numba switch.

Set ``MICROCRACK_NUMBA=0`` to force the pure-numpy kernels. Both paths are
importable at all times so tests and benchmarks can compare them.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("MICROCRACK_NUMBA", "1") not in ("0", "false", "no")


def njit(fn):
    """``numba.njit(cache=True)`` when numba is present, identity otherwise."""
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True)(fn)


def pick(fast, slow):
    return fast if USE_NUMBA else slow
