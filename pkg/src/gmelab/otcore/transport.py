"""Exact discrete optimal transport between equal-size uniform measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..measures import EmpiricalMeasure
from ..ndcore import ContractError, DimensionError
from .assignment import linear_assignment
from .costs import CostKind, pairwise_cost, quadratic_p


@dataclass(frozen=True, eq=False)
class Coupling:
    plan: np.ndarray
    row_weights: np.ndarray
    col_weights: np.ndarray

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=np.float64)
        rw = np.asarray(self.row_weights, dtype=np.float64)
        cw = np.asarray(self.col_weights, dtype=np.float64)
        if plan.shape != (rw.size, cw.size):
            raise DimensionError(f"plan {plan.shape} vs marginals ({rw.size}, {cw.size})")
        if np.any(plan < 0):
            raise ContractError("plan has negative entries")
        if (np.abs(plan.sum(axis=1) - rw).max(initial=0) > 1e-9
                or np.abs(plan.sum(axis=0) - cw).max(initial=0) > 1e-9):
            raise ContractError("plan marginals do not match the weights")
        object.__setattr__(self, "plan", plan)
        object.__setattr__(self, "row_weights", rw)
        object.__setattr__(self, "col_weights", cw)

    @classmethod
    def from_assignment(cls, assignment: np.ndarray) -> Coupling:
        n = len(assignment)
        plan = np.zeros((n, n))
        plan[np.arange(n), assignment] = 1.0 / n
        w = np.full(n, 1.0 / n)
        return cls(plan, w, w)

    @classmethod
    def from_map(cls, measure: EmpiricalMeasure) -> Coupling:
        """Plan induced by a map on the support: mass w_i sent from i to image i."""
        w = measure.weights
        return cls(np.diag(w), w, w)


@dataclass(frozen=True, eq=False)
class OtSolution:
    cost: float
    coupling: Coupling
    assignment: np.ndarray | None = None


def exact_ot_uniform(cost_matrix) -> OtSolution:
    """Optimal matching for two uniform measures with equally many atoms.

    ``cost`` is the mean matched cost, i.e. the OT cost of the uniform plan.
    """
    c = np.asarray(cost_matrix, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ContractError(f"uniform exact OT needs a square cost matrix, got {c.shape}")
    n = c.shape[0]
    if n == 0:
        raise ContractError("empty measures")
    sigma = linear_assignment(c)
    cost = float(c[np.arange(n), sigma].sum() / n)
    return OtSolution(cost, Coupling.from_assignment(sigma), sigma)


def _check_uniform_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.n != nu.n:
        raise ContractError(f"supports of different size ({mu.n} vs {nu.n})")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise ContractError("exact OT here is restricted to uniform weights")


def ot_between(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cost: CostKind) -> OtSolution:
    _check_uniform_pair(mu, nu)
    return exact_ot_uniform(pairwise_cost(cost, mu.points, nu.points))


def wasserstein_p(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0) -> float:
    """Standard W_p = (min_sigma mean |x_i - y_sigma(i)|^p)^(1/p)."""
    if mu.dim != nu.dim:
        raise DimensionError(f"dimension mismatch {mu.dim} vs {nu.dim}")
    sol = ot_between(mu, nu, quadratic_p(p))
    return float(max(p * sol.cost, 0.0) ** (1.0 / p))
