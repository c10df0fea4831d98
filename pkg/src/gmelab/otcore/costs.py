"""Ground costs between point clouds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from ..ndcore import ContractError, DimensionError

COST_KINDS = ("log_quadratic", "quadratic_p", "encoder_quadratic")


@dataclass(frozen=True)
class CostKind:
    """``log_quadratic``: log(1 + |x - y|^2).
    ``quadratic_p``: |x - y|^p / p.
    ``encoder_quadratic``: |T(x) - y|^2 / 2 for the carried encoder T.
    """

    kind: str
    p: float = 2.0
    encoder: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ContractError(f"unknown cost kind {self.kind!r}")
        if self.kind == "quadratic_p" and self.p < 1:
            raise ContractError("quadratic_p needs p >= 1")
        if self.kind == "encoder_quadratic" and self.encoder is None:
            raise ContractError("encoder_quadratic needs an encoder")

    def __call__(self, a, b) -> np.ndarray:
        return pairwise_cost(self, a, b)


def log_quadratic() -> CostKind:
    return CostKind("log_quadratic")


def quadratic_p(p: float = 2.0) -> CostKind:
    return CostKind("quadratic_p", p=p)


def encoder_quadratic(encoder: Callable[[np.ndarray], np.ndarray]) -> CostKind:
    return CostKind("encoder_quadratic", encoder=encoder)


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionError(f"points must be an n x dim array, got shape {a.shape}")
    return a


def sq_distances(a, b) -> np.ndarray:
    a, b = _as_points(a), _as_points(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b, "sqeuclidean")


def pairwise_cost(kind: CostKind, a, b) -> np.ndarray:
    """Matrix with entry (i, j) equal to c(a_i, b_j)."""
    if kind.kind == "encoder_quadratic":
        a = kind.encoder(_as_points(a))
        return 0.5 * sq_distances(a, b)
    d2 = sq_distances(a, b)
    if kind.kind == "log_quadratic":
        return np.log1p(d2)
    if kind.p == 2.0:
        return 0.5 * d2
    return np.sqrt(d2) ** kind.p / kind.p
