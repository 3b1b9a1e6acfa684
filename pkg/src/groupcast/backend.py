"""Kernel backend selection.

Hot inner-loop kernels (see kernels.py) are compiled with numba when it is
importable. Set ``GROUPCAST_BACKEND=numpy`` to force the pure-numpy/Python
fallback, or ``GROUPCAST_BACKEND=numba`` to require numba (ImportError if
absent). Default is ``auto``.

Both backends produce bit-identical results: jitted kernels are restricted
to order-stable arithmetic (no fastmath, no reassociation) and every
reduction whose summation order matters stays in shared numpy code.
"""

import os

_CHOICE = os.environ.get("GROUPCAST_BACKEND", "auto").strip().lower()

if _CHOICE not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"GROUPCAST_BACKEND must be one of auto|numba|numpy, got {_CHOICE!r}"
    )

USING_NUMBA = False

if _CHOICE in ("auto", "numba"):
    try:
        from numba import njit as _njit

        USING_NUMBA = True
    except ImportError:
        if _CHOICE == "numba":
            raise
        USING_NUMBA = False

if USING_NUMBA:

    def jit_kernel(func):
        """Compile a kernel with strict IEEE semantics (no fastmath)."""
        return _njit(cache=True)(func)

else:

    def jit_kernel(func):
        """Fallback: run the kernel as plain Python."""
        return func


def backend_name() -> str:
    return "numba" if USING_NUMBA else "numpy"
