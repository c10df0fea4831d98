"""Fully-connected networks over a flat parameter vector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, DimensionError, NumericError, Tensor, grad

ACTIVATIONS = ("identity", "relu", "tanh")
FINAL_ACTIVATIONS = ("identity", "tanh")
ACTIVATION_CODES = {name: code for code, name in enumerate(ACTIVATIONS)}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and activations.

    ``activations`` has one entry per hidden layer; when omitted every hidden
    layer uses ReLU.
    """

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...] = field(default=())
    final_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ContractError("an MLP needs at least two widths")
        if any(w <= 0 for w in widths):
            raise ContractError(f"widths must be positive, got {widths}")
        object.__setattr__(self, "layer_widths", widths)
        acts = tuple(self.activations) or ("relu",) * (len(widths) - 2)
        if len(acts) != len(widths) - 2:
            raise ContractError(
                f"{len(widths) - 2} hidden layers but {len(acts)} activations")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ContractError(f"unknown activation {a!r}")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ContractError(f"unknown final activation {self.final_activation!r}")
        object.__setattr__(self, "activations", acts)

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    def layer_shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.layer_widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(self.num_layers)]

    @property
    def num_params(self) -> int:
        return sum(a * b + b for (a, b), _ in self.layer_shapes())

    def layer_activation(self, i: int) -> str:
        return self.activations[i] if i < self.num_layers - 1 else self.final_activation


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform He-style fan-in initialization; biases start at zero."""
    chunks = []
    for (fan_in, fan_out), bshape in spec.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(bshape))
    return np.concatenate(chunks)


def unflatten(spec: MlpSpec, params: np.ndarray, requires_grad: bool = True) -> list[Tensor]:
    """Split a flat vector into ``[W1, b1, W2, b2, ...]`` leaf tensors.

    The leaves are views of ``params``; weights are stored row-major with
    shape ``(fan_in, fan_out)``.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.size != spec.num_params:
        raise DimensionError(
            f"expected {spec.num_params} parameters, got array of shape {params.shape}")
    leaves = []
    offset = 0
    for wshape, bshape in spec.layer_shapes():
        n = wshape[0] * wshape[1]
        leaves.append(Tensor(params[offset:offset + n].reshape(wshape), requires_grad))
        offset += n
        leaves.append(Tensor(params[offset:offset + bshape[0]], requires_grad))
        offset += bshape[0]
    return leaves


def flatten(tensors: list[Tensor]) -> np.ndarray:
    return np.concatenate([t.data.ravel() for t in tensors])


def _activate(h: Tensor, name: str) -> Tensor:
    if name == "relu":
        return h.relu()
    if name == "tanh":
        return h.tanh()
    return h


def apply(spec: MlpSpec, leaves: list[Tensor], x: Tensor, check_finite: bool = True) -> Tensor:
    if x.ndim != 2 or x.shape[1] != spec.in_width:
        raise DimensionError(f"input of shape {x.shape} for a net expecting width {spec.in_width}")
    h = x
    for i in range(spec.num_layers):
        h = _activate(h @ leaves[2 * i] + leaves[2 * i + 1], spec.layer_activation(i))
    if check_finite and not np.all(np.isfinite(h.data)):
        raise NumericError("non-finite network output")
    return h


def mlp_forward(spec: MlpSpec, params: np.ndarray, x) -> Tensor:
    """Evaluate the network on a batch (rows of ``x``)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    return apply(spec, unflatten(spec, params, requires_grad=False), x)


class Mlp:
    """A network spec bundled with its (mutable) flat parameter vector."""

    def __init__(self, spec: MlpSpec, params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None):
        self.spec = spec
        if params is None:
            if rng is None:
                raise ContractError("need params or an rng to initialize them")
            params = init_params(spec, rng)
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.num_params,):
            raise DimensionError(f"expected {spec.num_params} parameters, got {params.shape}")
        self.params = params

    def bind(self, requires_grad: bool = True) -> list[Tensor]:
        return unflatten(self.spec, self.params, requires_grad)

    def __call__(self, x, leaves: list[Tensor] | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if leaves is None:
            leaves = self.bind(requires_grad=False)
        return apply(self.spec, leaves, x)

    def numpy(self, x: np.ndarray) -> np.ndarray:
        return self(x).data

    def copy(self) -> Mlp:
        return Mlp(self.spec, self.params.copy())


def backward_params(loss: Tensor, leaves: list[Tensor]) -> np.ndarray:
    """Flat gradient of a scalar loss over the given parameter leaves."""
    if loss.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    return flatten(grad(loss, leaves))


def input_gradient(net: Mlp, x, leaves: list[Tensor] | None = None,
                   create_graph: bool = False) -> Tensor:
    """Row ``i`` of the result is the gradient of the scalar net at ``x[i]``."""
    if net.spec.out_width != 1:
        raise ContractError("input_gradient needs a scalar-output network")
    x = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    if leaves is None:
        leaves = net.bind(requires_grad=create_graph)
    out = apply(net.spec, leaves, x)
    (gx,) = grad(out.sum(), [x], create_graph=create_graph)
    return gx


def gradient_penalty(net: Mlp, x, leaves: list[Tensor]) -> Tensor:
    """Differentiable ``mean_i ||grad_x net(x_i)||^2``."""
    for i in range(net.spec.num_layers):
        if net.spec.layer_activation(i) not in ACTIVATIONS:
            raise ContractError("activation unsupported by the second-order pass")
    gx = input_gradient(net, x, leaves=leaves, create_graph=True)
    return (gx * gx).sum(axis=1).mean()


def grad_penalty_and_param_grad(net: Mlp, x) -> tuple[float, np.ndarray]:
    leaves = net.bind()
    penalty = gradient_penalty(net, x, leaves)
    return penalty.item(), backward_params(penalty, leaves)
