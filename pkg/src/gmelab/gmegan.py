"""The four-network objective and its alternating minimax training loop.

Networks: generator G (latent -> data), encoder T (data -> latent),
discriminator psi (data -> R) and R_inv (latent -> latent), which closes the
reconstruction loop x -> G(R_inv(T(x))).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .measures import EmpiricalMeasure, format_float, rng_stream, sample_latent
from .ndcore import (
    AdamState,
    ContractError,
    DimensionError,
    Mlp,
    MlpSpec,
    NumericError,
    Tensor,
    adam_step,
    grad,
    save_networks,
)
from .ndcore.adam import DEFAULT_BETA1, DEFAULT_BETA2
from .ndcore.mlp import flatten
from .otcore import gme_from_embedding, log_quadratic, quadratic_p

log = logging.getLogger(__name__)

NETWORK_NAMES = ("G", "T", "psi", "R_inv")
ABLATIONS = {"gme": "lambda1", "gp": "lambda2", "recon": "lambda3"}
HISTORY_COLUMNS = ("iter", "ot", "gme", "disc", "gp", "recon", "total")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, history: TrainHistory | None = None):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 5.0
    lr_g: float = 1e-4
    lr_t: float = 1e-4
    lr_psi: float = 1e-4
    lr_rinv: float = 1e-4
    batch: int = 16
    iterations: int = 20000
    seed: int = 0
    latent_dim: int = 2
    hidden_g: tuple[int, ...] = (128, 128)
    hidden_t: tuple[int, ...] = (128, 128)
    hidden_psi: tuple[int, ...] = (128, 128)
    hidden_rinv: tuple[int, ...] = (128, 128)
    activation_g: str = "tanh"
    activation_t: str = "tanh"
    activation_psi: str = "tanh"
    final_activation: str = "identity"
    gme_cost: str = "log_quadratic"
    adam_beta1: float = DEFAULT_BETA1
    adam_beta2: float = DEFAULT_BETA2
    checkpoint_every: int = 0
    ablations: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        for name in ("lr_g", "lr_t", "lr_psi", "lr_rinv"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.batch < 2:
            raise ContractError("batch must be at least 2 (GME needs pairs)")
        if self.iterations < 0:
            raise ContractError("iterations must be >= 0")
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ContractError(f"unknown ablation {a!r}; choose from {sorted(ABLATIONS)}")
        for name in ("hidden_g", "hidden_t", "hidden_psi", "hidden_rinv", "ablations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def ablate(self, *terms: str) -> TrainConfig:
        """Copy with each named regularizer's weight set to zero."""
        updates = {ABLATIONS[t]: 0.0 for t in terms if t in ABLATIONS}
        bad = [t for t in terms if t not in ABLATIONS]
        if bad:
            raise ContractError(f"unknown ablation(s) {bad}")
        return replace(self, ablations=tuple(sorted(set(self.ablations) | set(terms))), **updates)

    @property
    def effective_lambdas(self) -> tuple[float, float, float]:
        lam = [self.lambda1, self.lambda2, self.lambda3]
        for a in self.ablations:
            lam[("gme", "gp", "recon").index(a)] = 0.0
        return tuple(lam)  # type: ignore[return-value]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def cost_kind(self):
        if self.gme_cost == "log_quadratic":
            return log_quadratic()
        if self.gme_cost == "quadratic":
            return quadratic_p(2.0)
        raise ContractError(f"unknown GME cost {self.gme_cost!r}")


@dataclass
class NetworkBundle:
    G: Mlp
    T: Mlp
    psi: Mlp
    R_inv: Mlp

    def __post_init__(self):
        D, d = self.G.spec.out_width, self.G.spec.in_width
        ok = (self.T.spec.in_width == D and self.psi.spec.in_width == D
              and self.T.spec.out_width == d and self.R_inv.spec.in_width == d
              and self.R_inv.spec.out_width == d and self.psi.spec.out_width == 1)
        if not ok:
            raise DimensionError("network dimensions do not chain: "
                                 + ", ".join(f"{n}={m.spec.layer_widths}"
                                             for n, m in zip(NETWORK_NAMES, self.nets())))

    @property
    def ambient_dim(self) -> int:
        return self.G.spec.out_width

    @property
    def latent_dim(self) -> int:
        return self.G.spec.in_width

    def nets(self) -> list[Mlp]:
        return [self.G, self.T, self.psi, self.R_inv]

    def copy(self) -> NetworkBundle:
        return NetworkBundle(*(n.copy() for n in self.nets()))

    @classmethod
    def from_nets(cls, nets: list[Mlp]) -> NetworkBundle:
        if len(nets) != 4:
            raise ContractError(f"a bundle holds 4 networks, got {len(nets)}")
        return cls(*nets)

    def save(self, path) -> None:
        save_networks(path, self.nets())


def build_specs(config: TrainConfig, ambient_dim: int) -> list[MlpSpec]:
    D, d = ambient_dim, config.latent_dim

    def spec(widths, act, final="identity"):
        return MlpSpec(widths, (act,) * (len(widths) - 2), final)

    # R_inv stays a plain ReLU net whatever the other choices are
    return [
        spec((d, *config.hidden_g, D), config.activation_g, config.final_activation),
        spec((D, *config.hidden_t, d), config.activation_t),
        spec((D, *config.hidden_psi, 1), config.activation_psi),
        spec((d, *config.hidden_rinv, d), "relu"),
    ]


def init_bundle(config: TrainConfig, ambient_dim: int,
                rng: np.random.Generator | None = None) -> NetworkBundle:
    rng = rng if rng is not None else rng_stream(config.seed, "init")
    return NetworkBundle(*(Mlp(s, rng=rng) for s in build_specs(config, ambient_dim)))


@dataclass
class LossBreakdown:
    ot: float
    gme: float
    disc: float
    gp: float
    recon: float
    total: float

    def values(self) -> tuple[float, ...]:
        return (self.ot, self.gme, self.disc, self.gp, self.recon, self.total)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values())))


@dataclass
class LossGraph:
    """Differentiable terms of one evaluation plus the leaves they depend on."""

    ot: Tensor
    gme: Tensor
    disc: Tensor
    gp: Tensor
    recon: Tensor
    total: Tensor
    leaves: dict[str, list[Tensor]]
    lambdas: tuple[float, float, float]

    def breakdown(self) -> LossBreakdown:
        return LossBreakdown(self.ot.item(), self.gme.item(), self.disc.item(),
                             self.gp.item(), self.recon.item(), self.total.item())

    def update_objective(self) -> Tensor:
        """Surrogate whose gradient gives every network's update direction.

        The penalty depends on psi alone, so flipping its sign here leaves the
        G/T/R_inv gradients equal to those of ``total`` while giving psi the
        ascent direction of ``disc - lambda2 * gp``.
        """
        lam1, lam2, lam3 = self.lambdas
        return self.ot + lam1 * self.gme + self.disc + lam3 * self.recon - lam2 * self.gp


def _row_sq_norm(t: Tensor) -> Tensor:
    return (t * t).sum(axis=1)


def assemble_loss(bundle: NetworkBundle, x_batch, y_batch, config: TrainConfig) -> LossGraph:
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bundle.ambient_dim:
        raise DimensionError(f"x batch {x.shape} for ambient dim {bundle.ambient_dim}")
    if y.ndim != 2 or y.shape[1] != bundle.latent_dim:
        raise DimensionError(f"y batch {y.shape} for latent dim {bundle.latent_dim}")
    if x.shape[0] != y.shape[0]:
        raise DimensionError("x and y batches must have equal size")
    lam1, lam2, lam3 = config.effective_lambdas
    leaves = {name: net.bind() for name, net in zip(NETWORK_NAMES, bundle.nets())}
    G, T, psi, R_inv = bundle.nets()
    yt = Tensor(y)
    xt = Tensor(x, requires_grad=True)

    gy = G(yt, leaves["G"])
    ot = _row_sq_norm(T(gy, leaves["T"]) - yt).mean() * 0.5

    tx = T(Tensor(x), leaves["T"])
    gme = gme_from_embedding(x, tx, config.cost_kind(), config.cost_kind())

    psi_x = psi(xt, leaves["psi"])
    disc = psi(gy, leaves["psi"]).mean() - psi_x.mean()
    (grad_x,) = grad(psi_x.sum(), [xt], create_graph=True)
    gp = _row_sq_norm(grad_x).mean()

    recon = _row_sq_norm(G(R_inv(tx, leaves["R_inv"]), leaves["G"]) - Tensor(x)).mean()

    total = ot + lam1 * gme + disc + lam2 * gp + lam3 * recon
    if not np.isfinite(total.data):
        raise NumericError("non-finite loss")
    return LossGraph(ot, gme, disc, gp, recon, total, leaves, (lam1, lam2, lam3))


@dataclass
class OptimizerStates:
    G: AdamState
    T: AdamState
    psi: AdamState
    R_inv: AdamState

    @classmethod
    def for_bundle(cls, bundle: NetworkBundle, config: TrainConfig | None = None) -> OptimizerStates:
        b1 = config.adam_beta1 if config else DEFAULT_BETA1
        b2 = config.adam_beta2 if config else DEFAULT_BETA2
        return cls(*(AdamState.zeros(n.spec.num_params, beta1=b1, beta2=b2)
                     for n in bundle.nets()))

    def as_list(self) -> list[AdamState]:
        return [self.G, self.T, self.psi, self.R_inv]


def train_step(bundle: NetworkBundle, states: OptimizerStates, x_batch, y_batch,
               config: TrainConfig) -> tuple[NetworkBundle, OptimizerStates, LossBreakdown]:
    """One simultaneous update: G, T and R_inv descend, psi ascends.

    All four gradients come from the same evaluation of the loss.
    """
    graph = assemble_loss(bundle, x_batch, y_batch, config)
    names = NETWORK_NAMES
    all_leaves = [leaf for n in names for leaf in graph.leaves[n]]
    flat = flatten(grad(graph.update_objective(), all_leaves))
    if not np.all(np.isfinite(flat)):
        raise TrainingAborted("non-finite gradient")
    lrs = (config.lr_g, config.lr_t, config.lr_psi, config.lr_rinv)
    new_nets, new_states = [], []
    offset = 0
    for name, net, state, lr in zip(names, bundle.nets(), states.as_list(), lrs):
        g = flat[offset:offset + net.spec.num_params]
        offset += net.spec.num_params
        if name == "psi":
            g = -g  # gradient ascent
        params, state = adam_step(state, net.params, g, lr)
        new_nets.append(Mlp(net.spec, params))
        new_states.append(state)
    return NetworkBundle(*new_nets), OptimizerStates(*new_states), graph.breakdown()


@dataclass
class TrainHistory:
    losses: list[LossBreakdown] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, b: LossBreakdown) -> None:
        if not b.is_finite():
            raise TrainingAborted(f"non-finite loss at iteration {len(self.losses)}", self)
        self.losses.append(b)

    def array(self) -> np.ndarray:
        return np.array([b.values() for b in self.losses]).reshape(-1, 6)

    def to_csv(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for i, b in enumerate(self.losses):
            lines.append(",".join([str(i)] + [format_float(v) for v in b.values()]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), newline="\n")


class MinibatchSampler:
    """Draws batches without replacement; reshuffles after each full pass."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        if batch > n:
            raise ContractError(f"batch {batch} larger than dataset {n}")
        self.n, self.batch, self.rng = n, batch, rng
        self._order = rng.permutation(n)
        self._pos = 0
        self.epoch = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return idx


@dataclass
class TrainResult:
    bundle: NetworkBundle
    history: TrainHistory
    states: OptimizerStates


def train(dataset: EmpiricalMeasure, config: TrainConfig, bundle: NetworkBundle | None = None,
          checkpoint_dir: str | Path | None = None, log_every: int = 0) -> TrainResult:
    data = dataset.points
    if bundle is None:
        bundle = init_bundle(config, dataset.dim)
    if bundle.ambient_dim != dataset.dim:
        raise DimensionError(f"dataset dim {dataset.dim} != network dim {bundle.ambient_dim}")
    states = OptimizerStates.for_bundle(bundle, config)
    history = TrainHistory(metadata={
        "ablations": list(config.ablations),
        "lambdas": list(config.effective_lambdas),
        "seed": config.seed,
    })
    sampler = MinibatchSampler(dataset.n, config.batch, rng_stream(config.seed, "shuffle"))
    latent_rng = rng_stream(config.seed, "latent")
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    for it in range(config.iterations):
        x = data[sampler.next()]
        y = latent_rng.standard_normal((config.batch, bundle.latent_dim))
        try:
            bundle, states, losses = train_step(bundle, states, x, y, config)
            history.append(losses)
        except (TrainingAborted, NumericError) as exc:
            history.metadata["aborted_at"] = it
            raise TrainingAborted(f"iteration {it}: {exc}", history) from exc
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d total=%.5f ot=%.5f gme=%.5f disc=%.5f", it + 1,
                     losses.total, losses.ot, losses.gme, losses.disc)
        if ckpt_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            path = ckpt_dir / f"checkpoint_{it + 1:06d}.gmeg"
            bundle.save(path)
            history.checkpoints.append(path.name)
    history.metadata["epochs"] = sampler.epoch
    return TrainResult(bundle, history, states)


def generate(bundle: NetworkBundle, n: int, rng: np.random.Generator,
             return_latent: bool = False):
    """Push ``n`` fresh latent draws through the generator."""
    if n == 0:
        empty = EmpiricalMeasure(np.zeros((0, bundle.ambient_dim)), np.zeros(0))
        return (empty, np.zeros((0, bundle.latent_dim))) if return_latent else empty
    y = sample_latent(bundle.latent_dim, n, rng).points
    out = EmpiricalMeasure.uniform(bundle.G.numpy(y))
    return (out, y) if return_latent else out
