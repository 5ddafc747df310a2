"""Optional numba acceleration for the O(n) recursions.

The recursions are written in the subset of numpy that numba understands, so
they run unchanged (only slower) when numba is not installed.
"""

from __future__ import annotations

import os

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - optional acceleration
    _njit = None

DISABLED = _njit is None or os.environ.get("SSGP_DISABLE_JIT", "") not in ("", "0")


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it as is."""
    if DISABLED:
        return fn
    return _njit(cache=True, nogil=True)(fn)
