"""Kernel dispatch: the compiled extension when importable, pure Python otherwise.

Set ``COMMUTE_OD_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    if os.environ.get("COMMUTE_OD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python kernels forced by environment")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

stay_scan = _impl.stay_scan
complete_linkage = _impl.complete_linkage

__all__ = ["BACKEND", "stay_scan", "complete_linkage"]
