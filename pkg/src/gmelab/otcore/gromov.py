"""Gromov-Monge embedding cost and Gromov-Wasserstein objective evaluation."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..measures import EmpiricalMeasure
from ..ndcore import ContractError, Mlp, Tensor
from .costs import CostKind, log_quadratic, pairwise_cost
from .transport import Coupling


def gm_cost(encoder: Callable[[np.ndarray], np.ndarray], mu: EmpiricalMeasure,
            cost_x: CostKind | None = None, cost_y: CostKind | None = None) -> float:
    """Full double expectation of (c_X(x, x') - c_Y(Tx, Tx'))^2 under mu x mu.

    The diagonal pairs are included (they contribute zero for costs that
    vanish on the diagonal).
    """
    cost_x = cost_x or log_quadratic()
    cost_y = cost_y or log_quadratic()
    x = mu.points
    tx = np.asarray(encoder(x), dtype=np.float64)
    if tx.ndim == 1:
        tx = tx[:, None]
    diff = pairwise_cost(cost_x, x, x) - pairwise_cost(cost_y, tx, tx)
    w = mu.weights
    return float(w @ (diff * diff) @ w)


def _tensor_pair_cost(z: Tensor, kind: CostKind) -> Tensor:
    m, d = z.shape
    diff = z.reshape(m, 1, d) - z.reshape(1, m, d)
    d2 = (diff * diff).sum(axis=2)
    if kind.kind == "log_quadratic":
        return d2.log1p()
    if kind.kind == "quadratic_p" and kind.p == 2.0:
        return d2 * 0.5
    raise ContractError(f"differentiable GME supports log_quadratic and quadratic_p(2), not {kind}")


def gme_minibatch(encoder: Mlp, x_batch, leaves: list[Tensor] | None = None,
                  cost_x: CostKind | None = None, cost_y: CostKind | None = None) -> Tensor:
    """U-statistic of the GME cost over the m(m-1) ordered off-diagonal pairs.

    Differentiable with respect to ``leaves`` (the encoder's bound parameters).
    Equals ``gm_cost`` on the uniform batch measure times m / (m - 1).
    """
    x = x_batch.data if isinstance(x_batch, Tensor) else np.asarray(x_batch, dtype=np.float64)
    if x.shape[0] < 2:
        raise ContractError("the GME minibatch estimate needs at least two points")
    return gme_from_embedding(x, encoder(Tensor(x), leaves), cost_x, cost_y)


def gme_from_embedding(x: np.ndarray, z: Tensor, cost_x: CostKind | None = None,
                       cost_y: CostKind | None = None) -> Tensor:
    """GME U-statistic given the batch ``x`` and its differentiable embedding ``z``."""
    cost_x = cost_x or log_quadratic()
    cost_y = cost_y or log_quadratic()
    m = x.shape[0]
    if m < 2:
        raise ContractError("the GME minibatch estimate needs at least two points")
    diff = _tensor_pair_cost(z, cost_y) - pairwise_cost(cost_x, x, x)
    off_diag = Tensor(1.0 - np.eye(m))
    return (diff * diff * off_diag).sum() * (1.0 / (m * (m - 1)))


def gw_objective(coupling: Coupling, cost_x: np.ndarray, cost_y: np.ndarray) -> float:
    """Sum over i, j, i', j' of pi_ij pi_i'j' (C_X[i, i'] - C_Y[j, j'])^2."""
    pi = coupling.plan
    cx = np.asarray(cost_x, dtype=np.float64)
    cy = np.asarray(cost_y, dtype=np.float64)
    n, k = pi.shape
    if cx.shape != (n, n) or cy.shape != (k, k):
        raise ContractError(f"cost matrices {cx.shape}, {cy.shape} do not fit plan {pi.shape}")
    p, q = pi.sum(axis=1), pi.sum(axis=0)
    # expand the square: the quadratic terms only see the marginals
    cross = np.sum(pi * (cx @ pi @ cy.T))
    return float(p @ (cx * cx) @ p + q @ (cy * cy) @ q - 2.0 * cross)
