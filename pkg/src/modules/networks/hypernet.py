"""
Hypernetwork - maps a latent code to the weights of the implicit SDF network
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.config import settings
from src.core.exceptions import ShapeMismatchError
from src.modules.diffcore import ParamVector, SirenArch, Tape, Tensor, siren_init, unpack
from .layers import MLPArch, bind, mlp_apply, mlp_init

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperArch:
    """Hidden ReLU stack from the latent code to the flat weight vector of `target`"""
    target: SirenArch
    hidden_width: int = settings.HYPER_HIDDEN_WIDTH
    hidden_layers: int = settings.HYPER_HIDDEN_LAYERS
    output_scale: float = settings.HYPER_OUTPUT_SCALE

    @property
    def latent_dim(self) -> int:
        return self.target.latent_dim

    @property
    def mlp(self) -> MLPArch:
        return MLPArch("hyper", (self.latent_dim, *(self.hidden_width,) * self.hidden_layers,
                                 self.target.param_count()))

    def layout(self):
        return self.mlp.layout()

    def param_count(self) -> int:
        return self.mlp.param_count()


@dataclass
class HypoParams:
    """Generated implicit-network weights"""
    theta: Tensor
    arch: SirenArch

    @property
    def count(self) -> int:
        return self.theta.shape[0]

    def to_vector(self) -> ParamVector:
        return ParamVector(self.arch.layout(), self.theta.value.copy())


def hyper_init(arch: HyperArch, rng: np.random.Generator) -> ParamVector:
    """
    Fan-in initialization with a damped output layer whose bias is a sine-network
    initialization, so decoded weights start near a well-conditioned field
    """
    params = mlp_init(arch.mlp, rng)
    last = arch.mlp.n_layers - 1
    params.view(f"layer{last}.weight")[...] *= arch.output_scale
    params.view(f"layer{last}.bias")[...] = siren_init(arch.target, rng).data
    logger.info(f"Hypernetwork initialized ({arch.param_count()} parameters, "
                f"N_theta={arch.target.param_count()})")
    return params


def decode_hyper(params: Union[ParamVector, Tensor], z: Union[Tensor, np.ndarray], arch: HyperArch,
                 tape: Optional[Tape] = None, name: str = "hypernet") -> HypoParams:
    """
    Generate implicit-network weights from a latent code

    Args:
        params: Hypernetwork weights
        z: Latent code of length arch.latent_dim
        arch: Hypernetwork shape
        tape: Tape to record on (defaults to the tape of z, else a disabled one)
        name: Gradient key for the watched weights

    Returns:
        HypoParams laid out as arch.target expects
    """
    if tape is None:
        tape = z.tape if isinstance(z, Tensor) else Tape(enabled=False)
    if not isinstance(z, Tensor):
        z = tape.constant(z)
    if z.shape != (arch.latent_dim,):
        raise ShapeMismatchError(f"z must have length {arch.latent_dim}, got {z.shape}")
    blocks = unpack(bind(tape, params, name), arch.layout())
    theta = mlp_apply(blocks, z, arch.mlp)
    return HypoParams(theta, arch.target)
