"""Costs, exact discrete OT, Gromov-Monge costs and monotonicity checks."""
from .assignment import BACKEND, linear_assignment
from .costs import (
    CostKind,
    encoder_quadratic,
    log_quadratic,
    pairwise_cost,
    quadratic_p,
    sq_distances,
)
from .gromov import gm_cost, gme_from_embedding, gme_minibatch, gw_objective
from .monotone import CcmReport, ccm_check, ccm_check_matrix
from .transport import Coupling, OtSolution, exact_ot_uniform, ot_between, wasserstein_p

__all__ = [
    "BACKEND",
    "CcmReport",
    "CostKind",
    "Coupling",
    "OtSolution",
    "ccm_check",
    "ccm_check_matrix",
    "encoder_quadratic",
    "exact_ot_uniform",
    "gm_cost",
    "gme_from_embedding",
    "gme_minibatch",
    "gw_objective",
    "linear_assignment",
    "log_quadratic",
    "ot_between",
    "pairwise_cost",
    "quadratic_p",
    "sq_distances",
    "wasserstein_p",
]
