"""
Implicit SDF Network - queries, mesh extraction and the Stage I model bundle
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from src.config import ArchitectureConfig
from src.modules.diffcore import ParamVector, SirenArch, Tape, Tensor, siren_value, siren_with_derivs
from src.modules.geometry import GridSpec, Mesh, marching_cubes, reproject_vertices
from .encoder import EncoderArch, encode, encoder_init
from .hypernet import HyperArch, HypoParams, decode_hyper, hyper_init

logger = logging.getLogger(__name__)

Theta = Union[HypoParams, ParamVector, Tensor]


def siren_arch_for(config: ArchitectureConfig) -> SirenArch:
    width = config.resolved_sdf_width()
    return SirenArch(latent_dim=config.latent_dim,
                     hidden=(width,) * config.sdf_hidden_layers,
                     first_omega=config.first_omega,
                     hidden_omega=config.hidden_omega,
                     input_scale=config.input_scale)


def _theta(theta: Theta):
    return theta.theta if isinstance(theta, HypoParams) else theta


def _latent(z, tape: Tape) -> Optional[Tensor]:
    if z is None or isinstance(z, Tensor):
        return z
    return tape.constant(np.asarray(z, dtype=np.float64))


def sdf_query(theta: Theta, z, x: np.ndarray, arch: SirenArch,
              tape: Optional[Tape] = None) -> Tensor:
    """
    Signed distance predicted by the implicit network

    Args:
        theta: Generated weights
        z: Latent code (tensor or array)
        x: (N, 3) points or a single 3-vector, meters
        arch: Implicit network shape

    Returns:
        (N,) distances, or a scalar for a single point
    """
    theta = _theta(theta)
    if tape is None:
        tape = (theta.tape if isinstance(theta, Tensor) else
                z.tape if isinstance(z, Tensor) else Tape(enabled=False))
    return siren_value(theta, x, _latent(z, tape), arch, tape)


def _frozen(theta: Theta, z):
    theta = _theta(theta)
    theta_data = theta.value if isinstance(theta, Tensor) else theta.data
    z_data = z.value if isinstance(z, Tensor) else z
    return theta_data, z_data


def sdf_field(theta: Theta, z, arch: SirenArch) -> Callable[[np.ndarray], np.ndarray]:
    """Plain numpy field for meshing and metrics"""
    theta_data, z_data = _frozen(theta, z)

    def field(points: np.ndarray) -> np.ndarray:
        tape = Tape(enabled=False)
        return siren_value(tape.constant(theta_data), points, _latent(z_data, tape), arch, tape).value

    return field


def sdf_gradient_field(theta: Theta, z, arch: SirenArch) -> Callable[[np.ndarray], np.ndarray]:
    theta_data, z_data = _frozen(theta, z)

    def gradient(points: np.ndarray) -> np.ndarray:
        tape = Tape(enabled=False)
        return siren_with_derivs(tape.constant(theta_data), points, _latent(z_data, tape),
                                 arch, tape).grad.value

    return gradient


def marching_cubes_sdf(theta: Theta, z, arch: SirenArch, grid: GridSpec,
                       reproject: bool = False) -> Mesh:
    """
    Zero level set of the predicted field

    Args:
        theta: Generated weights
        z: Latent code
        arch: Implicit network shape
        grid: Sampling bounds and resolution
        reproject: One Newton step of the vertices onto the level set (export only)

    Returns:
        Mesh, empty when the grid holds no crossing
    """
    field = sdf_field(theta, z, arch)
    mesh = marching_cubes(field, grid)
    if reproject and not mesh.is_empty:
        mesh = reproject_vertices(mesh, field, sdf_gradient_field(theta, z, arch))
    return mesh


@dataclass
class ShapeModel:
    """
    Encoder and hypernetwork weights together with their shapes.

    Inference helpers run on disabled tapes; training code binds the two
    ParamVectors to its own tape instead.
    """
    encoder_arch: EncoderArch
    hyper_arch: HyperArch
    encoder: ParamVector
    hypernet: ParamVector

    @classmethod
    def create(cls, config: ArchitectureConfig, rng: np.random.Generator) -> "ShapeModel":
        encoder_arch, hyper_arch = cls.archs_for(config)
        return cls(encoder_arch, hyper_arch, encoder_init(encoder_arch, rng),
                   hyper_init(hyper_arch, rng))

    @staticmethod
    def archs_for(config: ArchitectureConfig):
        encoder_arch = EncoderArch(config.latent_dim, tuple(config.encoder_point_widths),
                                   tuple(config.encoder_head_widths))
        hyper_arch = HyperArch(siren_arch_for(config), config.hyper_hidden_width,
                               config.hyper_hidden_layers, config.hyper_output_scale)
        return encoder_arch, hyper_arch

    @property
    def siren_arch(self) -> SirenArch:
        return self.hyper_arch.target

    def embed(self, points: np.ndarray, encoder: Optional[ParamVector] = None) -> np.ndarray:
        return encode(self.encoder if encoder is None else encoder, points, self.encoder_arch).numpy()

    def reconstruct(self, points: np.ndarray):
        """(theta, z) for a cloud in mean mode"""
        z = self.embed(points)
        return decode_hyper(self.hypernet, z, self.hyper_arch), z

    def field(self, points: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        theta, z = self.reconstruct(points)
        return sdf_field(theta, z, self.siren_arch)

    def extract_mesh(self, points: np.ndarray, grid: GridSpec, reproject: bool = False) -> Mesh:
        theta, z = self.reconstruct(points)
        return marching_cubes_sdf(theta, z, self.siren_arch, grid, reproject)
