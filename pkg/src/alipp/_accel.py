"""Numba switch.

Set ``ALIPP_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba is
missing the numpy path is used silently.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

HAS_NUMBA = numba is not None
DISABLED = os.environ.get("ALIPP_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
USE_NUMBA = HAS_NUMBA and not DISABLED


def njit(fn):
    """Compile ``fn`` in nopython mode if numba is importable, else return it untouched."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
