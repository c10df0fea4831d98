"""Exhaustive c-cyclical monotonicity checks on finite sets of pairs."""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from ..ndcore import ContractError
from .costs import CostKind, pairwise_cost

CCM_TOL = 1e-9
MAX_CYCLE_LEN = 6
_CHUNK = 20000


@dataclass
class CcmReport:
    is_ccm: bool
    worst_violation: float
    witness_indices: list[int] = field(default_factory=list)
    witness_perm: list[int] = field(default_factory=list)
    cycles_tested: int = 0
    cycles_passing: int = 0

    @property
    def fraction_passing(self) -> float:
        return self.cycles_passing / self.cycles_tested if self.cycles_tested else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fraction_passing"] = self.fraction_passing
        return d


def cyclic_violations(cost: np.ndarray, subsets: np.ndarray,
                      perms: np.ndarray) -> np.ndarray:
    """Entry (s, p) is sum_i c(x_i, y_i) - sum_i c(x_perm(i), y_i) on subset s.

    ``cost[i, j] = c(x_i, y_j)``. Positive entries are violations.
    """
    base = cost[subsets, subsets].sum(axis=1)
    permuted = cost[subsets[:, perms], subsets[:, None, :]].sum(axis=2)
    return base[:, None] - permuted


def ccm_check_matrix(cost: np.ndarray, max_cycle_len: int = MAX_CYCLE_LEN,
                     tol: float = CCM_TOL) -> CcmReport:
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ContractError("need one y per x")
    if max_cycle_len > MAX_CYCLE_LEN:
        raise ContractError(f"cycle length capped at {MAX_CYCLE_LEN}")
    report = CcmReport(True, -np.inf)
    for k in range(2, min(max_cycle_len, n) + 1):
        perms = np.array([p for p in itertools.permutations(range(k))
                          if p != tuple(range(k))], dtype=np.intp)
        combos = itertools.combinations(range(n), k)
        while True:
            chunk = np.array(list(itertools.islice(combos, _CHUNK)), dtype=np.intp)
            if chunk.size == 0:
                break
            viol = cyclic_violations(cost, chunk, perms)
            ok = np.all(viol <= tol, axis=1)
            report.cycles_tested += len(chunk)
            report.cycles_passing += int(ok.sum())
            s, p = np.unravel_index(np.argmax(viol), viol.shape)
            if viol[s, p] > report.worst_violation:
                report.worst_violation = float(viol[s, p])
                report.witness_indices = chunk[s].tolist()
                report.witness_perm = perms[p].tolist()
    if report.cycles_tested == 0:
        report.worst_violation = 0.0
    report.is_ccm = report.worst_violation <= tol
    return report


def ccm_check(xs, ys, cost: CostKind, max_cycle_len: int = MAX_CYCLE_LEN,
              tol: float = CCM_TOL) -> CcmReport:
    """Test every subset of at most ``max_cycle_len`` pairs under every permutation.

    ``witness_perm`` maps positions of ``witness_indices``: the reassignment
    sends x at position ``perm[i]`` to y at position ``i``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) != len(ys):
        raise ContractError("xs and ys must pair up")
    return ccm_check_matrix(pairwise_cost(cost, xs, ys), max_cycle_len, tol)
