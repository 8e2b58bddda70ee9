"""Numba switch for the hot sequential kernels.

Set ``MHPROP_DISABLE_NUMBA=1`` before import to run every kernel through its
pure-numpy / pure-python fallback. Both paths are exercised by the test suite.
"""
import logging
import os

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("MHPROP_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by MHPROP_DISABLE_NUMBA")
    import numba

    NUMBA_AVAILABLE = True
except ImportError as exc:  # pragma: no cover - depends on environment
    numba = None
    NUMBA_AVAILABLE = False
    logger.debug("numba unavailable (%s); using numpy fallbacks", exc)


def jit_or(fallback=None, **njit_kwargs):
    """Compile ``func`` with ``numba.njit`` when enabled, else return ``fallback``.

    ``fallback`` defaults to the undecorated function itself.
    """

    def decorator(func):
        if NUMBA_AVAILABLE:
            compiled = numba.njit(cache=True, **njit_kwargs)(func)
            compiled.py_func_fallback = fallback if fallback is not None else func
            return compiled
        return fallback if fallback is not None else func

    return decorator
