"""Numba switch.

Set ``EVOAD_NUMBA=0`` to force the pure-numpy kernels even when numba is
importable.
"""

import os
from typing import Any, Callable

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def _njit(*_args: Any, **_kwargs: Any) -> Callable[[Callable], Callable]:
        return lambda f: f


def numba_requested() -> bool:
    flag = os.environ.get("EVOAD_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and numba_requested()


def njit(f: Callable) -> Callable:
    """Compile ``f`` in nopython mode with on-disk caching."""
    if not HAVE_NUMBA:
        return f
    return _njit(cache=True, nogil=True)(f)
