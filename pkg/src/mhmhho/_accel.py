"""Numba toggle.

Set ``MHMHHO_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging and for the benchmark comparison).
"""
import os

DISABLED = os.environ.get("MHMHHO_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
    njit = numba.njit
except ImportError:  # pragma: no cover - exercised via the env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(f):
            return f

        return wrapper


USE_NUMBA = HAVE_NUMBA
