"""
Point Cloud Encoder - PointNet without the input transform
Shared per-point MLP, max-pool over points, head MLP to (mu, log variance)
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.config import settings
from src.core.exceptions import ParameterRangeError, ShapeMismatchError
from src.modules.diffcore import ParamLayout, ParamVector, Tape, Tensor, unpack
from src.modules.diffcore.tensor import clip, exp, max_, relu, take
from .layers import MLPArch, bind, mlp_apply, mlp_init

logger = logging.getLogger(__name__)

LOG_VAR_BOUNDS = (-20.0, 10.0)


@dataclass(frozen=True)
class EncoderArch:
    latent_dim: int = settings.LATENT_DIM
    point_widths: Tuple[int, ...] = settings.ENCODER_POINT_WIDTHS
    head_widths: Tuple[int, ...] = settings.ENCODER_HEAD_WIDTHS

    @property
    def point_mlp(self) -> MLPArch:
        return MLPArch("point", (3, *self.point_widths))

    @property
    def head_mlp(self) -> MLPArch:
        return MLPArch("head", (self.point_widths[-1], *self.head_widths, 2 * self.latent_dim))

    @property
    def tag(self) -> str:
        return f"pointnet-{self.point_mlp.tag}-{self.head_mlp.tag}"

    def layout(self) -> ParamLayout:
        return ParamLayout(self.tag, [*self.point_mlp.blocks("point."),
                                      *self.head_mlp.blocks("head.")])

    def param_count(self) -> int:
        return self.point_mlp.param_count() + self.head_mlp.param_count()


@dataclass
class LatentState:
    """Embedding z with its Gaussian posterior"""
    z: Tensor
    mu: Tensor
    log_var: Tensor
    sigma: Tensor

    def numpy(self) -> np.ndarray:
        return self.z.value.copy()


def encoder_init(arch: EncoderArch, rng: np.random.Generator) -> ParamVector:
    params = ParamVector(arch.layout())
    mlp_init(arch.point_mlp, rng, params, "point.")
    mlp_init(arch.head_mlp, rng, params, "head.")
    logger.info(f"Encoder initialized ({arch.param_count()} parameters)")
    return params


def encode(params: Union[ParamVector, Tensor], points: np.ndarray, arch: EncoderArch,
           mode: str = "mean", rng: Optional[np.random.Generator] = None,
           tape: Optional[Tape] = None, name: str = "encoder") -> LatentState:
    """
    Embed a point cloud

    Args:
        params: Encoder weights (watched on the tape when it is enabled)
        points: (N, 3) cloud, N >= 1
        arch: Encoder shape
        mode: 'mean' sets z = mu; 'sample' draws z = mu + sigma * eps
        rng: Required in sample mode
        tape: Tape to record on; a disabled tape when omitted
        name: Gradient key for the watched weights

    Returns:
        LatentState
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeMismatchError(f"point cloud must be (N, 3), got {points.shape}")
    if len(points) == 0:
        raise ParameterRangeError("cannot encode an empty point cloud")
    if mode not in ("mean", "sample"):
        raise ParameterRangeError(f"unknown encoding mode '{mode}'")
    tape = Tape(enabled=False) if tape is None else tape
    blocks = unpack(bind(tape, params, name), arch.layout())

    features = mlp_apply(blocks, tape.constant(points), arch.point_mlp, "point.",
                         final_activation=relu)
    pooled = max_(features, axis=0)
    head = mlp_apply(blocks, pooled, arch.head_mlp, "head.")

    n = arch.latent_dim
    mu = take(head, slice(0, n))
    log_var = clip(take(head, slice(n, 2 * n)), *LOG_VAR_BOUNDS)
    sigma = exp(log_var * 0.5)
    if mode == "mean":
        return LatentState(mu, mu, log_var, sigma)
    if rng is None:
        raise ParameterRangeError("sample mode needs a random generator")
    z = mu + sigma * rng.standard_normal(n)
    return LatentState(z, mu, log_var, sigma)


def embed(params: ParamVector, points: np.ndarray, arch: EncoderArch) -> np.ndarray:
    """Mean-mode embedding as a plain array"""
    return encode(params, points, arch, mode="mean").numpy()


def embed_many(params: ParamVector, clouds: np.ndarray, arch: EncoderArch) -> np.ndarray:
    """
    Mean-mode embeddings of a stack of equal-size clouds, without a tape

    Args:
        params: Encoder weights
        clouds: (B, N, 3)
        arch: Encoder shape

    Returns:
        (B, latent_dim), equal to embed() row by row
    """
    clouds = np.asarray(clouds, dtype=np.float64)
    if clouds.ndim != 3 or clouds.shape[2] != 3 or clouds.shape[1] == 0:
        raise ShapeMismatchError(f"clouds must be (B, N, 3) with N >= 1, got {clouds.shape}")
    h = clouds
    for i in range(arch.point_mlp.n_layers):
        h = np.maximum(h @ params.view(f"point.layer{i}.weight") + params.view(f"point.layer{i}.bias"), 0.0)
    h = h.max(axis=1)
    head = arch.head_mlp
    for i in range(head.n_layers):
        h = h @ params.view(f"head.layer{i}.weight") + params.view(f"head.layer{i}.bias")
        if i < head.n_layers - 1:
            h = np.maximum(h, 0.0)
    return h[:, :arch.latent_dim]
