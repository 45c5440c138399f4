"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
fallback is used. Set ``SUNG_KERNELS=python`` to force the fallback.
"""
import os

from . import fallback

ACT_IDENTITY, ACT_TANH, ACT_RELU = 0, 1, 2

_compiled = None
if os.environ.get("SUNG_KERNELS", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

kernels = _compiled if _compiled is not None else fallback
BACKEND = "cython" if _compiled is not None else "python"


def compiled_available():
    return _compiled is not None


def get_backend(name):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
