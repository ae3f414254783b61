"""JIT plumbing for the hot numeric kernels.

Every kernel in this package is written as plain NumPy-on-arrays code and
decorated with :func:`njit`. By default the decorator is numba's ``njit``;
setting the environment variable ``PRSBC_NUMBA=0`` (or numba being absent)
selects the pure-NumPy fallback path, where the same functions run un-jitted.
The flag is read once at import time.
"""

import os

__all__ = ["njit", "NUMBA_ENABLED"]


def _flag_enabled() -> bool:
    value = os.environ.get("PRSBC_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "off", "no")


NUMBA_ENABLED = _flag_enabled()

if NUMBA_ENABLED:
    try:
        from numba import njit  # noqa: F401
    except ImportError:
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """Identity decorator: run the kernel as ordinary Python/NumPy."""
        if args and callable(args[0]):
            return args[0]

        def decorate(func):
            return func

        return decorate
