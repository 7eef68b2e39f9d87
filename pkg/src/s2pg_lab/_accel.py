"""Numba switch.

Hot kernels are compiled with ``numba.njit`` unless the environment variable
``S2PG_LAB_NUMBA`` is set to ``0`` (or numba is not importable), in which case
the pure-numpy fallback of every kernel is used instead. The flag is read once
at import time.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("S2PG_LAB_NUMBA", "1").strip().lower()

try:  # pragma: no cover - exercised implicitly
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

USE_NUMBA: bool = _numba is not None and _FLAG not in {"0", "false", "off", "no"}

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if _numba is None:
        return fn
    return _numba.njit(**numba_default)(fn)


def select(compiled, fallback):
    """Pick the numba kernel or its numpy fallback according to the flag."""
    return compiled if USE_NUMBA else fallback
