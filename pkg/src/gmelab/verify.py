"""Numerical oracles for the method's guarantees, and diagnostics for trained bundles.

Discrete-instance oracles (k-set bound, W_p sandwich, the c_T / W_2 equality,
the pushforward construction) are hard gates at 1e-9. Checks on trained
networks return fractions to be compared against calibrated thresholds.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .gmegan import NetworkBundle
from .measures import EmpiricalMeasure, UNASSIGNED, format_float, sample_latent
from .ndcore import ContractError, Mlp
from .otcore import (
    CcmReport,
    encoder_quadratic,
    exact_ot_uniform,
    gm_cost,
    pairwise_cost,
    quadratic_p,
    sq_distances,
    wasserstein_p,
)
from .otcore.monotone import cyclic_violations

Map = Callable[[np.ndarray], np.ndarray]

HARD_TOL = 1e-9
MIN_PAIR_DIST = 1e-9


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and dataclasses for json.dump."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _apply(fn: Map, pts: np.ndarray) -> np.ndarray:
    if isinstance(fn, Mlp):
        out = fn.numpy(pts)
    else:
        out = fn(pts)
        out = np.asarray(getattr(out, "data", out), dtype=np.float64)
    return out[:, None] if out.ndim == 1 else out


# -- bi-Lipschitz diagnostics ---------------------------------------------------

@dataclass
class BiLipReport:
    distances: np.ndarray
    ratios: np.ndarray
    quantiles: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.ratios.size:
            qs = np.quantile(self.ratios, [0.0, 0.25, 0.5, 0.75, 1.0])
            self.quantiles = dict(zip(("min", "q25", "median", "q75", "max"), map(float, qs)))

    @property
    def median(self) -> float:
        return self.quantiles["median"]

    @property
    def iqr(self) -> float:
        return self.quantiles["q75"] - self.quantiles["q25"]

    def write_csv(self, path) -> None:
        lines = ["distance,ratio"]
        lines += [f"{format_float(d)},{format_float(r)}" for d, r in zip(self.distances, self.ratios)]
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")

    def summary(self) -> dict:
        return {"num_pairs": int(self.ratios.size), **self.quantiles, "iqr": self.iqr}


def _distinct_pairs(n: int, num_pairs: int, rng: np.random.Generator) -> np.ndarray:
    i = rng.integers(0, n, num_pairs)
    j = (i + rng.integers(1, n, num_pairs)) % n  # uniform over j != i
    return np.stack([i, j], axis=1)


def bilip_scatter(encoder: Map, sample: EmpiricalMeasure, num_pairs: int,
                  rng: np.random.Generator) -> BiLipReport:
    """Ratio |T(x) - T(x')| / |x - x'| on uniformly drawn pairs of distinct points."""
    if num_pairs < 1:
        raise ContractError("num_pairs must be >= 1")
    x = sample.points
    if x.shape[0] < 2 or np.all(x == x[0]):
        raise ContractError("degenerate sample: need at least two distinct points")
    pairs = _distinct_pairs(x.shape[0], num_pairs, rng)
    tx = _apply(encoder, x)
    d = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
    td = np.linalg.norm(tx[pairs[:, 0]] - tx[pairs[:, 1]], axis=1)
    keep = d >= MIN_PAIR_DIST
    return BiLipReport(d[keep], td[keep] / d[keep])


def bilip_constant(encoder: Map, points) -> float:
    """Largest alpha in (0, 1] with alpha <= ratio <= 1/alpha over all support pairs."""
    x = np.asarray(points, dtype=np.float64)
    tx = _apply(encoder, x)
    iu = np.triu_indices(len(x), 1)
    d = np.sqrt(sq_distances(x, x)[iu])
    td = np.sqrt(sq_distances(tx, tx)[iu])
    keep = d >= MIN_PAIR_DIST
    if not np.any(keep):
        return 1.0
    r = td[keep] / d[keep]
    return float(min(1.0, r.min(), 1.0 / r.max()))


# -- k-set bound for small GME cost ---------------------------------------------

@dataclass
class KSetReport:
    alpha: float
    gamma: float
    epsilon: float
    mass_in_K: float
    mass_B: float
    mass_Q: float
    bound: float
    count_K: int
    count_B: int
    count_Q: int
    separated_pairs: int
    measure_pass: bool
    bilip_pass: bool

    @property
    def passed(self) -> bool:
        return self.measure_pass and self.bilip_pass

    def to_dict(self) -> dict:
        return {**jsonable(self), "pass": self.passed}


def kset_check(encoder: Map, mu: EmpiricalMeasure, alpha: float, gamma: float) -> KSetReport:
    """Classify all ordered pairs by (|Tx - Tx'|^2 + 1) / (|x - x'|^2 + 1).

    K holds ratios in [alpha, 1/alpha]; B (ratio > 1/alpha) and Q
    (ratio < alpha) split the rest. With epsilon = GM(T, mu) under log costs
    the mass of K must be at least 1 - epsilon / log(alpha)^2, and pairs of K
    with |x - x'|^2 >= (1 - alpha) / (alpha gamma) must satisfy
    alpha (1 - gamma) d^2 <= |Tx - Tx'|^2 <= (1/alpha + gamma) d^2.
    """
    if not 0 < alpha < 1 or not 0 < gamma < 1:
        raise ContractError("need 0 < alpha < 1 and 0 < gamma < 1")
    x = mu.points
    tx = _apply(encoder, x)
    eps = gm_cost(encoder, mu)
    d2 = sq_distances(x, x)
    t2 = sq_distances(tx, tx)
    ratio = (t2 + 1.0) / (d2 + 1.0)
    in_b = ratio > 1.0 / alpha
    in_q = ratio < alpha
    in_k = ~(in_b | in_q)
    ww = np.outer(mu.weights, mu.weights)
    mass_k = float(ww[in_k].sum())
    bound = 1.0 - eps / np.log(alpha) ** 2
    sep = in_k & (d2 >= (1.0 - alpha) / (alpha * gamma))
    lo = alpha * (1.0 - gamma) * d2[sep]
    hi = (1.0 / alpha + gamma) * d2[sep]
    slack = HARD_TOL * np.maximum(1.0, d2[sep])
    bilip_ok = bool(np.all((lo <= t2[sep] + slack) & (t2[sep] <= hi + slack)))
    return KSetReport(
        alpha=alpha, gamma=gamma, epsilon=eps, mass_in_K=mass_k,
        mass_B=float(ww[in_b].sum()), mass_Q=float(ww[in_q].sum()), bound=float(bound),
        count_K=int(in_k.sum()), count_B=int(in_b.sum()), count_Q=int(in_q.sum()),
        separated_pairs=int(sep.sum()),
        measure_pass=bool(mass_k >= bound - 1e-12), bilip_pass=bilip_ok)


# -- W_p sandwich under a bi-Lipschitz map -----------------------------------------

@dataclass
class SandwichReport:
    alpha: float
    p: float
    w_original: float
    w_mapped: float
    lower_slack: float
    upper_slack: float

    @property
    def passed(self) -> bool:
        return self.lower_slack >= -HARD_TOL and self.upper_slack >= -HARD_TOL

    def to_dict(self) -> dict:
        return {**jsonable(self), "pass": self.passed}


def prop21_sandwich(encoder: Map, a: EmpiricalMeasure, b: EmpiricalMeasure, p: float = 2.0,
                    alpha: float | None = None) -> SandwichReport:
    """alpha W_p(Ta, Tb) <= W_p(a, b) <= W_p(Ta, Tb) / alpha, both sides solved exactly.

    When ``alpha`` is omitted it is the exact discrete bi-Lipschitz constant
    over the union of both supports.
    """
    if alpha is None:
        alpha = bilip_constant(encoder, np.vstack([a.points, b.points]))
    w = wasserstein_p(a, b, p)
    wt = wasserstein_p(a.pushforward(lambda z: _apply(encoder, z)),
                       b.pushforward(lambda z: _apply(encoder, z)), p)
    return SandwichReport(alpha, p, w, wt, w - alpha * wt, wt / alpha - w)


# -- c_T cost versus W_2 of the embedded measure ---------------------------------

def _check_injective(tx: np.ndarray) -> None:
    d2 = sq_distances(tx, tx)
    np.fill_diagonal(d2, np.inf)
    if len(tx) > 1 and d2.min() == 0.0:
        raise ContractError("encoder is not injective on the support")


@dataclass
class Lemma41Report:
    ot_encoder_cost: float
    w2_squared: float
    delta: float

    @property
    def passed(self) -> bool:
        return self.delta <= HARD_TOL

    def to_dict(self) -> dict:
        return {**jsonable(self), "pass": self.passed}


def lemma41_equality(encoder: Map, mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> Lemma41Report:
    """OT under c_T(x, y) = |T(x) - y|^2 / 2 equals OT under |z - y|^2 / 2 from T#mu."""
    tx = _apply(encoder, mu.points)
    _check_injective(tx)
    lhs = exact_ot_uniform(pairwise_cost(encoder_quadratic(lambda z: _apply(encoder, z)),
                                         mu.points, nu.points)).cost
    rhs = exact_ot_uniform(pairwise_cost(quadratic_p(2.0), tx, nu.points)).cost
    return Lemma41Report(lhs, rhs, abs(lhs - rhs))


@dataclass
class PushforwardReport:
    generator_images: np.ndarray
    assignment: np.ndarray
    multiset_equal: bool
    generator_cost: float
    ot_cost: float
    cost_delta: float

    @property
    def passed(self) -> bool:
        return self.multiset_equal and self.cost_delta <= HARD_TOL

    def to_dict(self) -> dict:
        d = jsonable(self)
        d.pop("generator_images")
        return {**d, "pass": self.passed}


def _sorted_rows(a: np.ndarray) -> np.ndarray:
    return a[np.lexsort(a.T[::-1])]


def thm42_pushforward(encoder: Map, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                      inverse: Map | None = None) -> PushforwardReport:
    """Build G* = T^-1 o R* from the optimal matching R* of nu onto T#mu.

    By default T^-1 is the exact lookup on T's image of the support; a
    closed-form ``inverse`` can be supplied instead (then the multiset check
    uses a 1e-9 tolerance).
    """
    x, y = mu.points, nu.points
    if len(x) != len(y):
        raise ContractError("equal-size supports required")
    tx = _apply(encoder, x)
    _check_injective(tx)
    match = exact_ot_uniform(pairwise_cost(quadratic_p(2.0), y, tx)).assignment
    if inverse is None:
        images = x[match]
        multiset = bool(np.array_equal(_sorted_rows(images), _sorted_rows(x)))
    else:
        images = _apply(inverse, tx[match])
        multiset = bool(np.allclose(_sorted_rows(images), _sorted_rows(x), rtol=0, atol=HARD_TOL))
    gen_cost = float(np.mean(0.5 * np.sum((_apply(encoder, images) - y) ** 2, axis=1)))
    ot = exact_ot_uniform(pairwise_cost(encoder_quadratic(lambda z: _apply(encoder, z)), x, y)).cost
    return PushforwardReport(images, match, multiset, gen_cost, ot, abs(gen_cost - ot))


# -- checks on trained bundles ---------------------------------------------------------

def ccm_trained(bundle: NetworkBundle, n_probe: int, cycle_len: int, rng: np.random.Generator,
                num_cycles: int = 1000, tol: float = 1e-6) -> CcmReport:
    """c_T-cyclical monotonicity of {(G(y), y)} on randomly drawn cycles.

    For every length 2..cycle_len, ``num_cycles`` random tuples of distinct
    probes are drawn; a tuple passes when no reassignment of its points
    lowers the summed c_T cost by more than ``tol``.
    """
    if not 2 <= cycle_len <= 5:
        raise ContractError("cycle_len must be in 2..5")
    if n_probe < cycle_len:
        raise ContractError("need at least cycle_len probes")
    y = sample_latent(bundle.latent_dim, n_probe, rng).points
    tx = bundle.T.numpy(bundle.G.numpy(y))
    cost = 0.5 * sq_distances(tx, y)
    report = CcmReport(True, -np.inf)
    for k in range(2, cycle_len + 1):
        tuples = np.array([rng.choice(n_probe, k, replace=False) for _ in range(num_cycles)])
        perms = np.array([p for p in itertools.permutations(range(k))
                          if p != tuple(range(k))], dtype=np.intp)
        viol = cyclic_violations(cost, tuples, perms)
        ok = np.all(viol <= tol, axis=1)
        report.cycles_tested += len(tuples)
        report.cycles_passing += int(ok.sum())
        s, p = np.unravel_index(np.argmax(viol), viol.shape)
        if viol[s, p] > report.worst_violation:
            report.worst_violation = float(viol[s, p])
            report.witness_indices = tuples[s].tolist()
            report.witness_perm = perms[p].tolist()
    report.is_ccm = report.cycles_passing == report.cycles_tested
    return report


def monotone_fraction(latent: np.ndarray, embedded: np.ndarray) -> float:
    """Fraction of pairs i < j with <R(y_i) - R(y_j), y_i - y_j> >= 0."""
    iu = np.triu_indices(len(latent), 1)
    dy = latent[:, None, :] - latent[None, :, :]
    dr = embedded[:, None, :] - embedded[None, :, :]
    inner = np.einsum("ijk,ijk->ij", dr, dy)[iu]
    return float(np.mean(inner >= 0))


def monotone2d_check(bundle: NetworkBundle, n_probe: int, rng: np.random.Generator) -> float:
    """Monotonicity of R = T o G over all pairs of ``n_probe`` latent draws."""
    if bundle.latent_dim != 2:
        raise ContractError("monotone2d_check needs a 2-D latent space")
    y = sample_latent(2, n_probe, rng).points
    return monotone_fraction(y, bundle.T.numpy(bundle.G.numpy(y)))


# -- sawtooth pushforwards ----------------------------------------------------------------

def sawtooth(k: int, x: np.ndarray) -> np.ndarray:
    """G_0 is the identity; G_k has k teeth, each mapping [i/k, (i+1)/k] onto [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if k == 0:
        return x.copy()
    i = np.minimum(np.floor(x * k), k - 1)
    return 2 * k * np.abs(x - (2 * i + 1) / (2 * k))


def gk_pushforward_demo(k: int, n: int) -> float:
    """KS distance between G_k applied to the n-point midpoint grid and U[0, 1]."""
    if k < 0 or n < 100:
        raise ContractError("need k >= 0 and n >= 100")
    grid = (np.arange(n) + 0.5) / n
    return float(stats.kstest(sawtooth(k, grid), "uniform").statistic)


# -- mode balance ---------------------------------------------------------------------------

def class_counts(labels, num_classes: int) -> tuple[np.ndarray, int]:
    lab = np.asarray(labels, dtype=np.int64)
    assigned = lab[lab != UNASSIGNED]
    if np.any((assigned < 0) | (assigned >= num_classes)):
        raise ContractError("label out of range")
    return np.bincount(assigned, minlength=num_classes), int(np.sum(lab == UNASSIGNED))


def relative_std_counts(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.size
    if k < 2:
        raise ContractError("relative std needs at least two classes")
    mean = counts.sum() / k
    if mean == 0:
        raise ContractError("no assigned samples")
    sigma = np.sqrt(np.sum((counts - mean) ** 2) / (k - 1))
    return float(sigma / mean)


def relative_std(labels, num_classes: int) -> float:
    """sigma / mu of per-class counts; unassigned labels are ignored."""
    counts, _ = class_counts(labels, num_classes)
    return relative_std_counts(counts)


# -- discriminator regularity ---------------------------------------------------------------

@dataclass
class ModulusProfile:
    bin_edges: np.ndarray
    raw_max: np.ndarray
    curve: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return jsonable(self)


def modulus_probe(psi: Map, sample: EmpiricalMeasure, num_pairs: int, rng: np.random.Generator,
                  num_bins: int = 20, max_distance: float | None = None) -> ModulusProfile:
    """Binned max |psi(x) - psi(x')| against |x - x'|, made nondecreasing by a running max."""
    if num_pairs < 1:
        raise ContractError("num_pairs must be >= 1")
    x = sample.points
    pairs = _distinct_pairs(len(x), num_pairs, rng)
    v = _apply(psi, x)[:, 0]
    d = np.linalg.norm(x[pairs[:, 0]] - x[pairs[:, 1]], axis=1)
    dv = np.abs(v[pairs[:, 0]] - v[pairs[:, 1]])
    top = max_distance if max_distance is not None else float(d.max())
    edges = np.linspace(0.0, top, num_bins + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, num_bins - 1)
    keep = d <= top
    raw = np.zeros(num_bins)
    np.maximum.at(raw, idx[keep], dv[keep])
    counts = np.bincount(idx[keep], minlength=num_bins)
    return ModulusProfile(edges, raw, np.maximum.accumulate(raw), counts)


def modulus_dominance(a: ModulusProfile, b: ModulusProfile) -> float:
    """Fraction of bins (populated in both) where a's curve is <= b's."""
    both = (a.counts > 0) & (b.counts > 0)
    if not np.any(both):
        return float("nan")
    return float(np.mean(a.curve[both] <= b.curve[both]))
