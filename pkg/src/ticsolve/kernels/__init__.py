"""Backend selection for the hot stepping kernels.

The numba backend is the default when importable; set TICSOLVE_BACKEND=numpy
to force the pure-numpy path (or =numba to insist, raising if unavailable).
Both backends implement the same functions with identical arithmetic.
"""
from __future__ import annotations

import os

from . import numpy_backend

_choice = os.environ.get("TICSOLVE_BACKEND", "").strip().lower()

if _choice == "numpy":
    _impl = numpy_backend
    HAS_NUMBA = False
else:
    try:
        from . import numba_backend as _impl

        HAS_NUMBA = True
    except ImportError:
        if _choice == "numba":
            raise
        _impl = numpy_backend
        HAS_NUMBA = False

BACKEND = _impl.NAME
hjb_step = _impl.hjb_step
frozen_step = _impl.frozen_step
thomas = _impl.thomas

__all__ = ["BACKEND", "HAS_NUMBA", "hjb_step", "frozen_step", "thomas",
           "numpy_backend"]
