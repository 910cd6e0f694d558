"""Optional numba acceleration.

Set ``KATOLAB_NUMBA=0`` in the environment to force the pure-numpy kernels.
The flag is read once at import time; :func:`use_numba` reports the outcome.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("KATOLAB_NUMBA", "1").strip().lower()

try:  # pragma: no cover - depends on environment
    if _FLAG in ("0", "false", "no", "off"):
        raise ImportError("numba disabled by KATOLAB_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _njit = None
    HAVE_NUMBA = False


def use_numba() -> bool:
    return HAVE_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def deco(fn):
        return fn

    return deco
