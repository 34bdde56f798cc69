"""
Adam over ParamVectors
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from src.config import settings
from .params import ParamVector

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First and second moment estimates plus the step counter"""
    m: ParamVector
    v: ParamVector
    step: int = 0

    @classmethod
    def zeros(cls, params: ParamVector) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def adam_step(params: ParamVector, grads: ParamVector, state: AdamState,
              lr: float = settings.ADAM_LR_PRETRAIN,
              beta1: float = settings.ADAM_BETAS[0],
              beta2: float = settings.ADAM_BETAS[1],
              eps: float = settings.ADAM_EPS):
    """
    One bias-corrected Adam update

    Args:
        params: Current parameters
        grads: Gradient with the same layout
        state: Moments for the same layout

    Returns:
        (new params, new state); inputs are not modified
    """
    params.check_layout(grads)
    params.check_layout(state.m)
    params.check_layout(state.v)

    step = state.step + 1
    g = grads.data
    m = beta1 * state.m.data + (1.0 - beta1) * g
    v = beta2 * state.v.data + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    updated = params.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params.like(updated), AdamState(params.like(m), params.like(v), step)


@dataclass
class Adam:
    """Adam optimizer bound to one parameter set"""
    params: ParamVector
    lr: float = settings.ADAM_LR_PRETRAIN
    beta1: float = settings.ADAM_BETAS[0]
    beta2: float = settings.ADAM_BETAS[1]
    eps: float = settings.ADAM_EPS
    state: AdamState = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.state = AdamState.zeros(self.params)

    def step(self, grads: ParamVector) -> ParamVector:
        self.params, self.state = adam_step(self.params, grads, self.state,
                                            self.lr, self.beta1, self.beta2, self.eps)
        return self.params
