"""Numeric inner loops used by the data pipeline, vocoder and evaluation code.

Two interchangeable implementations exist: ``numba`` (compiled loops) and
``numpy`` (vectorised).  The active one is chosen at import time; set
``EMOTTS_NUMBA=0`` to force the numpy path.  Both are always importable
through :func:`backend` so they can be compared against each other.
"""

import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # numba missing or broken
    _numba = None

_FLAG = os.environ.get("EMOTTS_NUMBA", "1").strip().lower()
BACKEND = "numba" if (_numba is not None and _FLAG not in ("0", "false", "no", "off")) else "numpy"

_impls = {"numpy": _numpy}
if _numba is not None:
    _impls["numba"] = _numba


def backend(name=None):
    """Return the kernel module for ``name`` (defaults to the active backend)."""
    name = name or BACKEND
    try:
        return _impls[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(_impls)}") from None


def available():
    return sorted(_impls)


_active = _impls[BACKEND]
phone_average = _active.phone_average
expand = _active.expand
overlap_add = _active.overlap_add
box_smooth = _active.box_smooth
edit_distance = _active.edit_distance

__all__ = [
    "BACKEND",
    "available",
    "backend",
    "box_smooth",
    "edit_distance",
    "expand",
    "overlap_add",
    "phone_average",
]
