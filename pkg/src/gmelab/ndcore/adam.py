from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError

# beta1=0.5 is the usual choice for adversarial training
DEFAULT_BETA1 = 0.5
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS

    @classmethod
    def zeros(cls, n: int, **kw) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step. Returns new params and state."""
    n = params.shape[0]
    if grads.shape != params.shape or state.first_moment.shape != (n,) \
            or state.second_moment.shape != (n,):
        raise ContractError("params, grads and moment buffers must have equal length")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return new_params, new_state
