"""Numba switch.

Hot kernels are written in the numba-compatible subset of Python. Set
``MAPC_NO_NUMBA=1`` to run the pure numpy / Python fallbacks instead.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None

NUMBA_AVAILABLE = numba is not None
NUMBA_ENABLED = NUMBA_AVAILABLE and os.environ.get("MAPC_NO_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
    "on",
)


def jit(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it untouched."""
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True)(func)
