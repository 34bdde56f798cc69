"""
Fully connected building blocks over the differentiation tape
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from src.modules.diffcore import ParamLayout, ParamVector, Tape, Tensor
from src.modules.diffcore.tensor import matmul, relu

logger = logging.getLogger(__name__)

Activation = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class MLPArch:
    """Widths of a dense network, input first and output last"""
    name: str
    widths: Tuple[int, ...]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def tag(self) -> str:
        return f"{self.name}-" + "x".join(str(w) for w in self.widths)

    def blocks(self, prefix: str = ""):
        for i in range(self.n_layers):
            yield f"{prefix}layer{i}.weight", (self.widths[i], self.widths[i + 1])
            yield f"{prefix}layer{i}.bias", (self.widths[i + 1],)

    def layout(self) -> ParamLayout:
        return ParamLayout(self.tag, self.blocks())

    def param_count(self) -> int:
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(self.n_layers))


def mlp_init(arch: MLPArch, rng: np.random.Generator, params: Optional[ParamVector] = None,
             prefix: str = "") -> ParamVector:
    """
    Uniform fan-in initialization, U(±1/sqrt(fan_in)) for weights and biases

    Args:
        arch: Network widths
        rng: Random generator
        params: Fill the prefixed blocks of an existing vector instead of a new one
        prefix: Block name prefix inside `params`
    """
    params = params if params is not None else ParamVector(arch.layout())
    for i in range(arch.n_layers):
        bound = 1.0 / np.sqrt(arch.widths[i])
        weight = params.view(f"{prefix}layer{i}.weight")
        weight[...] = rng.uniform(-bound, bound, weight.shape)
        bias = params.view(f"{prefix}layer{i}.bias")
        bias[...] = rng.uniform(-bound, bound, bias.shape)
    return params


def bind(tape: Tape, params: Union[ParamVector, Tensor], name: Optional[str] = None,
         trainable: bool = True) -> Tensor:
    """Put a parameter vector on the tape, as a watched leaf or as a constant"""
    if isinstance(params, Tensor):
        return params
    if trainable and tape.enabled:
        return tape.watch(params, name)
    return tape.constant(params.data)


def mlp_apply(blocks: Dict[str, Tensor], x: Tensor, arch: MLPArch, prefix: str = "",
              activation: Activation = relu,
              final_activation: Optional[Activation] = None) -> Tensor:
    """
    Dense layers with `activation` between them

    Args:
        blocks: Named parameter tensors from diffcore.unpack
        x: (..., widths[0]) input
        arch: Network widths
        prefix: Block name prefix
        activation: Hidden nonlinearity
        final_activation: Applied to the output layer when given

    Returns:
        (..., widths[-1]) output
    """
    h = x
    for i in range(arch.n_layers):
        h = matmul(h, blocks[f"{prefix}layer{i}.weight"]) + blocks[f"{prefix}layer{i}.bias"]
        if i < arch.n_layers - 1:
            h = activation(h)
        elif final_activation is not None:
            h = final_activation(h)
    return h
