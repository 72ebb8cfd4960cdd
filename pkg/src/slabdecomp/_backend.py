"""Kernel backend selection.

The compiled kernels are used when the extension imports; setting
``SLABDECOMP_BACKEND=python`` forces the numpy fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def available():
    """Names of the importable backends."""
    return ["python"] + (["compiled"] if _ckernels is not None else [])


def get(name):
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _select():
    requested = os.environ.get("SLABDECOMP_BACKEND", "").strip().lower()
    if requested in ("python", "pure"):
        return "python"
    if requested == "compiled" or _ckernels is not None:
        return "compiled" if _ckernels is not None else "python"
    return "python"


BACKEND = _select()
kernels = get(BACKEND)
