"""Selects the compiled kernel when available, else the numpy fallback.

Set ``WLFRAILTY_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
risk_set_sums = _kernels_py.risk_set_sums

if os.environ.get("WLFRAILTY_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    else:
        risk_set_sums = _ckernels.risk_set_sums
        BACKEND = "cython"

__all__ = ["BACKEND", "risk_set_sums"]
