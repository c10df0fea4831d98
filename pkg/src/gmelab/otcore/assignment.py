"""Backend selection for the assignment kernel.

The compiled extension is used when it imports; otherwise the pure-Python
kernel. Set ``GMELAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _lap_py
from ..ndcore import ContractError, NumericError

BACKEND = "python"
_compiled = None
if os.environ.get("GMELAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _lap as _compiled  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _compiled = None

KERNELS = {"python": _lap_py.solve_assignment}
if _compiled is not None:
    KERNELS["cython"] = _compiled.solve_assignment


def linear_assignment(cost, backend: str | None = None) -> np.ndarray:
    """Row-to-column permutation minimizing the summed cost of a square matrix."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractError(f"assignment needs a square cost matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix contains NaN or Inf")
    if cost.shape[0] == 0:
        return np.empty(0, dtype=np.intp)
    kernel = KERNELS[backend or BACKEND]
    return np.asarray(kernel(cost), dtype=np.intp)
