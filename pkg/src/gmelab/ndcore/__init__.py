"""Tensors, reverse-mode autodiff, MLPs and Adam."""
from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_networks, save_networks
from .mlp import (
    Mlp,
    MlpSpec,
    backward_params,
    grad_penalty_and_param_grad,
    gradient_penalty,
    init_params,
    input_gradient,
    mlp_forward,
)
from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    grad,
    no_grad,
)

__all__ = [
    "AdamState",
    "CheckpointError",
    "ContractError",
    "DimensionError",
    "Mlp",
    "MlpSpec",
    "NumericError",
    "Tensor",
    "adam_step",
    "backward_params",
    "grad",
    "grad_penalty_and_param_grad",
    "gradient_penalty",
    "init_params",
    "input_gradient",
    "load_networks",
    "mlp_forward",
    "no_grad",
    "save_networks",
]
