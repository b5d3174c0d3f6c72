"""numba availability switch.

Set ``RAREGER_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is installed.
"""

import os

_DISABLED = os.environ.get("RAREGER_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by RAREGER_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        # support both @njit and @njit(cache=True)
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorate(func):
            return func

        return decorate


__all__ = ["HAVE_NUMBA", "njit"]
