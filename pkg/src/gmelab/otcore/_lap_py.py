"""Pure-Python shortest-augmenting-path Hungarian solver (fallback kernel)."""
from __future__ import annotations

import math

import numpy as np


def solve_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square cost matrix.

    Returns ``col`` with ``col[i]`` the column assigned to row ``i``. Runs in
    O(n^3) with row potentials ``u`` and column potentials ``v``; when several
    columns tie for the minimum reduced cost the lowest index is taken.
    """
    n = cost.shape[0]
    rows = [r.tolist() for r in cost]
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match = [0] * (n + 1)  # match[j] = row (1-based) holding column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        col[match[j] - 1] = j - 1
    return col
