"""Kernel backend selection.

The compiled ``_ckernels`` module is used when it was built; otherwise the
numpy fallback in ``_pykernels``. Setting ``PINNSTAB_PURE_PYTHON=1`` before
import forces the fallback, and :func:`use` switches at runtime (the
benchmark and the cross-backend tests rely on it).
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # not built
    _ckernels = None

AVAILABLE = {"python": _pykernels}
if _ckernels is not None:
    AVAILABLE["cython"] = _ckernels

if _ckernels is not None and not os.environ.get("PINNSTAB_PURE_PYTHON"):
    kernels = _ckernels
    name = "cython"
else:
    kernels = _pykernels
    name = "python"


def use(backend):
    """Switch the active kernel module; returns the previous backend name."""
    global kernels, name
    if backend not in AVAILABLE:
        raise ValueError(f"kernel backend {backend!r} not available; have {sorted(AVAILABLE)}")
    previous = name
    kernels = AVAILABLE[backend]
    name = backend
    return previous
