"""Numba dispatch.

Set ``GAMERL_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
fallback. The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("GAMERL_DISABLE_NUMBA", "").strip().lower()

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _nb = None

USE_NUMBA = _nb is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or identity when numba is unavailable."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if _nb is None:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _nb.njit(*args, **kwargs)
