"""
Stage I Losses - SDF fit, medial-axis, KL, weight and consistency terms

Integrals over the query regions are realized as equal-weight sample means.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from src.config import LossWeights
from src.modules.diffcore import ParamVector, SirenArch, Tape, Tensor, siren_with_derivs
from src.modules.diffcore.tensor import (abs_, exp, log, maximum, mean, sqrt, square, sum_,
                                         take)
from src.modules.networks import (EncoderArch, HyperArch, bind, decode_hyper, encode)
from .queries import SdfBatch

logger = logging.getLogger(__name__)

TERMS = ("sdf", "skel", "kl", "weight", "cns")


def _tensor(x: Union[Tensor, np.ndarray, float], tape: Optional[Tape] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    tape = Tape(enabled=False) if tape is None else tape
    return tape.constant(np.asarray(x, dtype=np.float64))


def sdf_terms(values: Tensor, grads: Tensor, normals: np.ndarray, n_on: int,
              sdf_alpha: float) -> Dict[str, Tensor]:
    """
    The three parts of the SDF fit for fields evaluated on (on, near, off) points

    Args:
        values: (N,) field values, the first n_on on the surface
        grads: (N, 3) spatial gradients
        normals: (n_on, 3) unit normals of the on-surface points
        n_on: Number of on-surface rows
        sdf_alpha: Decay of the off-surface penalty

    Returns:
        Dict with 'eikonal', 'surface' and 'off_surface' scalars
    """
    n = values.shape[0]
    grad_norm = sqrt(sum_(square(grads), axis=1))
    eikonal = mean(abs_(grad_norm - 1.0))

    on_values = take(values, slice(0, n_on))
    on_grads = take(grads, slice(0, n_on))
    alignment = sum_(on_grads * np.asarray(normals, dtype=np.float64), axis=1)
    surface = mean(abs_(on_values) + (1.0 - alignment))

    rest = take(values, slice(n_on, n))
    off_surface = mean(exp(abs_(rest) * -sdf_alpha))
    return {"eikonal": eikonal, "surface": surface, "off_surface": off_surface}


def loss_sdf(theta, z, batch: SdfBatch, arch: SirenArch,
             sdf_alpha: float, tape: Optional[Tape] = None) -> Tensor:
    """Eikonal + on-surface + off-surface penalty of the generated field"""
    out = siren_with_derivs(theta, batch.all_points, z, arch, tape)
    terms = sdf_terms(out.value, out.grad, batch.on_normals, len(batch.on_points), sdf_alpha)
    return terms["eikonal"] + terms["surface"] + terms["off_surface"]


def skeleton_term(laplacian: Tensor, skel_eps: float) -> Tensor:
    """-mean log max(laplacian, eps); large positive Laplacian at medial points is rewarded"""
    return -mean(log(maximum(laplacian, skel_eps)))


def loss_skel(theta, z, medial: np.ndarray, arch: SirenArch, skel_eps: float,
              tape: Optional[Tape] = None) -> Tensor:
    out = siren_with_derivs(theta, medial, z, arch, tape)
    return skeleton_term(out.laplacian, skel_eps)


def loss_kl(mu, sigma) -> Tensor:
    """Mean per-dimension KL divergence from N(mu, sigma^2) to N(0, 1)"""
    mu = _tensor(mu)
    sigma = _tensor(sigma, mu.tape)
    log_var = log(sigma) * 2.0
    return mean((log_var + 1.0 - square(mu) - square(sigma)) * -0.5)


def loss_weight(theta) -> Tensor:
    """Mean squared generated weight"""
    theta = _tensor(theta.data if isinstance(theta, ParamVector) else theta)
    return sum_(square(theta)) * (1.0 / theta.shape[0])


def loss_cns(z, z_bar) -> Tensor:
    """Squared distance between two latent codes over N_z"""
    z = _tensor(z)
    z_bar = _tensor(z_bar, z.tape)
    return sum_(square(z - z_bar)) * (1.0 / z.shape[0])


@dataclass
class LossTerms:
    """Unweighted terms, the weighted total and the partial/complete latent gap"""
    sdf: Tensor
    skel: Tensor
    kl: Tensor
    weight: Tensor
    cns: Tensor
    total: Tensor
    z_gap: float

    def values(self) -> Dict[str, float]:
        row = {name: getattr(self, name).item() for name in TERMS}
        row["total"] = self.total.item()
        row["z_gap"] = self.z_gap
        return row

    def weighted(self, weights: LossWeights) -> Dict[str, float]:
        """Each term multiplied by its weight, the magnitudes the optimizer sees"""
        scale = {"sdf": 1.0, "skel": weights.skel, "kl": weights.kl,
                 "weight": weights.weight, "cns": weights.cns}
        return {name: scale[name] * getattr(self, name).item() for name in TERMS}

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.values().values())


def pretrain_objective(encoder: Union[ParamVector, Tensor], hypernet: Union[ParamVector, Tensor],
                       partial: np.ndarray, complete: np.ndarray, batch: SdfBatch,
                       encoder_arch: EncoderArch, hyper_arch: HyperArch,
                       weights: LossWeights, rng: np.random.Generator,
                       tape: Tape) -> LossTerms:
    """
    Weighted Stage I loss for one record

    The partial cloud is encoded in sample mode; the consistency target is the
    mean-mode code of the complete cloud under the same encoder weights.

    Args:
        encoder: Encoder weights, watched as 'encoder'
        hypernet: Hypernetwork weights, watched as 'hypernet'
        partial: (N, 3) observed cloud
        complete: (M, 3) full-surface cloud
        batch: Query sets of the record
        encoder_arch: Encoder shape
        hyper_arch: Hypernetwork shape
        weights: Term weights; a zero skeleton weight skips that term
        rng: Draws the reparameterization noise
        tape: Tape recording the evaluation

    Returns:
        LossTerms
    """
    encoder_t = bind(tape, encoder, "encoder")
    hypernet_t = bind(tape, hypernet, "hypernet")
    latent = encode(encoder_t, partial, encoder_arch, mode="sample", rng=rng, tape=tape)
    reference = encode(encoder_t, complete, encoder_arch, mode="mean", tape=tape)
    theta = decode_hyper(hypernet_t, latent.z, hyper_arch, tape).theta
    arch = hyper_arch.target

    sdf = loss_sdf(theta, latent.z, batch, arch, weights.sdf_alpha, tape)
    if weights.skel > 0:
        skel = loss_skel(theta, latent.z, batch.medial, arch, weights.skel_eps, tape)
    else:
        skel = tape.constant(0.0)
    kl = loss_kl(latent.mu, latent.sigma)
    weight = loss_weight(theta)
    cns = loss_cns(latent.z, reference.z)
    total = (sdf + skel * weights.skel + kl * weights.kl + weight * weights.weight
             + cns * weights.cns)
    z_gap = float(np.linalg.norm(latent.mu.value - reference.z.value))
    return LossTerms(sdf, skel, kl, weight, cns, total, z_gap)
