"""
Sinusoidal implicit network with analytic input derivatives

The value, the spatial gradient and the Laplacian are propagated together,
layer by layer, using tape primitives only. Reverse-mode differentiation of
any of the three outputs with respect to the weights or the latent code
therefore follows the exact second-order path.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from src.config import settings
from src.core.exceptions import LayoutMismatchError, ShapeMismatchError
from .params import ParamLayout, ParamVector, unpack
from .tensor import (Tape, Tensor, cos, matmul, mul, reshape, sin, square, sum_, take)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SirenArch:
    """
    Shape of the implicit network

    Attributes:
        latent_dim: Length of the conditioning code concatenated to x
        hidden: Hidden widths
        first_omega: Frequency of the first sine layer
        hidden_omega: Frequency of the remaining sine layers
        input_scale: Coordinates are multiplied by this before the first layer
            and the output divided by it, so the field stays in meters
        sine_output: Apply a sine to the output layer as well
        in_dim: Spatial dimension
    """
    latent_dim: int = settings.LATENT_DIM
    hidden: Tuple[int, ...] = (settings.SDF_WIDTH_DESK,) * settings.SDF_HIDDEN_LAYERS
    first_omega: float = settings.SIREN_FIRST_OMEGA
    hidden_omega: float = settings.SIREN_HIDDEN_OMEGA
    input_scale: float = settings.SDF_INPUT_SCALE
    sine_output: bool = False
    in_dim: int = 3

    @property
    def widths(self) -> List[int]:
        return [self.in_dim + self.latent_dim, *self.hidden, 1]

    @property
    def tag(self) -> str:
        hidden = "x".join(str(w) for w in self.hidden) or "none"
        return f"siren-{self.in_dim}+{self.latent_dim}-{hidden}-1"

    def layout(self) -> ParamLayout:
        widths = self.widths
        blocks = []
        for i in range(len(widths) - 1):
            blocks.append((f"layer{i}.weight", (widths[i], widths[i + 1])))
            blocks.append((f"layer{i}.bias", (widths[i + 1],)))
        return ParamLayout(self.tag, blocks)

    def param_count(self) -> int:
        widths = self.widths
        return sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1))

    def omega(self, layer: int) -> float:
        return self.first_omega if layer == 0 else self.hidden_omega

    def is_sine(self, layer: int) -> bool:
        return layer < len(self.widths) - 2 or self.sine_output


@dataclass
class SirenOutput:
    """Field value, spatial gradient and Laplacian at a batch of points"""
    value: Tensor       # (N,)
    grad: Tensor        # (N, 3)
    laplacian: Tensor   # (N,)


def siren_init(arch: SirenArch, rng: np.random.Generator) -> ParamVector:
    """
    Standard sine-network initialization

    First-layer weights are uniform in ±1/fan_in, later layers in
    ±sqrt(6/fan_in)/omega. Biases are uniform in ±1/sqrt(fan_in).
    """
    layout = arch.layout()
    params = ParamVector(layout)
    widths = arch.widths
    for i in range(len(widths) - 1):
        fan_in = widths[i]
        bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / arch.omega(i)
        params.view(f"layer{i}.weight")[...] = rng.uniform(-bound, bound, (fan_in, widths[i + 1]))
        params.view(f"layer{i}.bias")[...] = rng.uniform(
            -1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), widths[i + 1])
    return params


def _as_theta(tape: Tape, theta: Union[Tensor, ParamVector], arch: SirenArch) -> Tensor:
    layout = arch.layout()
    if isinstance(theta, ParamVector):
        if theta.layout != layout:
            raise LayoutMismatchError(
                f"theta layout '{theta.layout.arch}' does not match '{layout.arch}'")
        return tape.constant(theta.data)
    if theta.shape != (layout.length,):
        raise LayoutMismatchError(
            f"theta has {theta.shape} values, '{layout.arch}' needs {layout.length}")
    return theta


def _prepare(tape: Tape, theta, x: np.ndarray, z: Optional[Tensor], arch: SirenArch):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.ndim > 2 or x.shape[-1] != arch.in_dim:
        raise ShapeMismatchError(f"x must be (N, {arch.in_dim}), got {x.shape}")
    points = x.reshape(-1, arch.in_dim)
    if arch.latent_dim and (z is None or z.shape != (arch.latent_dim,)):
        raise ShapeMismatchError(
            f"z must have length {arch.latent_dim}, got {None if z is None else z.shape}")
    blocks = unpack(_as_theta(tape, theta, arch), arch.layout())
    return single, tape.constant(points * arch.input_scale), blocks


def _first_preactivation(blocks, u: Tensor, z: Optional[Tensor], arch: SirenArch):
    weight = blocks["layer0.weight"]
    w_x = take(weight, slice(0, arch.in_dim))
    a = matmul(u, w_x) + blocks["layer0.bias"]
    if arch.latent_dim:
        w_z = take(weight, slice(arch.in_dim, arch.in_dim + arch.latent_dim))
        a = a + matmul(z, w_z)
    return a, w_x


def siren_value(theta, x: np.ndarray, z: Optional[Tensor], arch: SirenArch,
                tape: Optional[Tape] = None) -> Tensor:
    """
    Field value only

    Args:
        theta: Flat weight tensor or ParamVector
        x: (N, 3) query points in meters, or a single 3-vector
        z: Latent tensor of length arch.latent_dim
        arch: Network shape
        tape: Tape to record on (defaults to the tape of z or theta)

    Returns:
        (N,) values, or a scalar for a single point
    """
    tape = _default_tape(theta, z) if tape is None else tape
    single, u, blocks = _prepare(tape, theta, x, z, arch)
    n_layers = len(arch.widths) - 1
    a, _ = _first_preactivation(blocks, u, z, arch)
    for i in range(n_layers):
        if i > 0:
            a = matmul(h, blocks[f"layer{i}.weight"]) + blocks[f"layer{i}.bias"]
        h = sin(arch.omega(i) * a) if arch.is_sine(i) else a
    value = reshape(h, (-1,)) * (1.0 / arch.input_scale)
    return take(value, 0) if single else value


def siren_with_derivs(theta, x: np.ndarray, z: Optional[Tensor], arch: SirenArch,
                      tape: Optional[Tape] = None) -> SirenOutput:
    """
    Field value with its analytic spatial gradient and Laplacian

    Tracks, per layer, the Jacobian J of the activations with respect to the
    scaled input (N, 3, width) and their Laplacian L (N, width). A linear
    layer maps J -> J W and L -> L W; a sine layer y = sin(w a) maps
    J -> w cos(w a) J and L -> w cos(w a) L - w^2 sin(w a) sum_k J_k^2.

    Args:
        theta: Flat weight tensor or ParamVector
        x: (N, 3) query points in meters, or a single 3-vector
        z: Latent tensor of length arch.latent_dim
        arch: Network shape
        tape: Tape to record on

    Returns:
        SirenOutput in meters: value (N,), grad (N, 3), laplacian (N,)
    """
    tape = _default_tape(theta, z) if tape is None else tape
    single, u, blocks = _prepare(tape, theta, x, z, arch)
    n = u.shape[0]
    n_layers = len(arch.widths) - 1

    a, w_x = _first_preactivation(blocks, u, z, arch)
    # first-layer Jacobian is the same for every point
    jac = reshape(w_x, (1, arch.in_dim, -1))
    lap = None
    for i in range(n_layers):
        if i > 0:
            weight = blocks[f"layer{i}.weight"]
            a = matmul(h, weight) + blocks[f"layer{i}.bias"]
            jac = matmul(jac, weight)
            lap = matmul(lap, weight)
        if arch.is_sine(i):
            omega = arch.omega(i)
            s = sin(omega * a)
            c = cos(omega * a) * omega
            curvature = mul(s * (-omega * omega), sum_(square(jac), axis=1))
            lap = curvature if lap is None else c * lap + curvature
            jac = mul(reshape(c, (n, 1, -1)), jac)
            h = s
        else:
            h = a
            if lap is None:
                lap = tape.constant(np.zeros((n, a.shape[1])))
    if jac.shape[0] != n:
        jac = mul(tape.constant(np.ones((n, 1, 1))), jac)

    scale = arch.input_scale
    value = reshape(h, (-1,)) * (1.0 / scale)
    grad = reshape(jac, (n, arch.in_dim))
    laplacian = reshape(lap, (-1,)) * scale
    if single:
        return SirenOutput(take(value, 0), take(grad, 0), take(laplacian, 0))
    return SirenOutput(value, grad, laplacian)


def _default_tape(theta, z) -> Tape:
    for candidate in (theta, z):
        if isinstance(candidate, Tensor):
            return candidate.tape
    return Tape(enabled=False)
