"""Convolution backend selection.

SSLFORGE_BACKEND picks the kernel implementation:

  numba  - jitted loops (the accelerated path)
  numpy  - pure numpy fallback
  auto   - numba when importable, else numpy (default)

Resolution happens once, at first use. Both backends produce identical
results up to floating-point summation order; each is individually
deterministic across reruns and thread counts.
"""

import os

from .errors import ArgumentError

_ACTIVE = None


def _resolve():
    choice = os.environ.get("SSLFORGE_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ArgumentError(
            f"SSLFORGE_BACKEND must be auto, numba, or numpy, got {choice!r}")
    if choice in ("auto", "numba"):
        try:
            from . import kernels_numba
            return "numba", kernels_numba
        except ImportError:
            if choice == "numba":
                raise ArgumentError(
                    "SSLFORGE_BACKEND=numba but numba is not importable")
    from . import kernels_numpy
    return "numpy", kernels_numpy


def get_kernels():
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = _resolve()
    return _ACTIVE[1]


def backend_name():
    get_kernels()
    return _ACTIVE[0]
