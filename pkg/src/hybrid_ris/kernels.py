"""Kernel dispatch: the compiled extension when available, else pure Python.

Set ``HYBRID_RIS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("HYBRID_RIS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

chain_messages = _impl.chain_messages
ris_sweep = _impl.ris_sweep
bs_sweep = _impl.bs_sweep
