"""Backend selection for the hot loops.

The compiled extension is preferred; set ``SEQNAV_PURE_PYTHON=1`` to force the
pure-Python fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("SEQNAV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

dtw_cost = _impl.dtw_cost
cast_rays = _impl.cast_rays
integrate_rays = _impl.integrate_rays


def available_backends():
    """Mapping of backend name to module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
