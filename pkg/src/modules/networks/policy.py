"""
Actor and Twin Critic Networks
Squashed Gaussian actor over (proprioception, z) and two Q heads sharing one vector
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.config import settings
from src.core.exceptions import NonFiniteError, ParameterRangeError, ShapeMismatchError
from src.modules.diffcore import ParamLayout, ParamVector, Tape, Tensor, unpack
from src.modules.diffcore.tensor import clip, concat, exp, reshape, softplus, sum_, take, tanh
from .layers import MLPArch, bind, mlp_apply, mlp_init

logger = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)


@dataclass(frozen=True)
class PolicyArch:
    """Shapes of the actor and of each critic head"""
    proprio_dim: int = settings.PROPRIO_DIM
    latent_dim: int = settings.LATENT_DIM
    action_dim: int = settings.ACTION_DIM
    hidden: Tuple[int, ...] = settings.POLICY_HIDDEN
    log_std_bounds: Tuple[float, float] = settings.LOG_STD_BOUNDS

    @property
    def state_dim(self) -> int:
        return self.proprio_dim + self.latent_dim

    @property
    def actor_mlp(self) -> MLPArch:
        return MLPArch("actor", (self.state_dim, *self.hidden, 2 * self.action_dim))

    @property
    def critic_mlp(self) -> MLPArch:
        return MLPArch("critic", (self.state_dim + self.action_dim, *self.hidden, 1))

    def actor_layout(self) -> ParamLayout:
        return self.actor_mlp.layout()

    def critic_layout(self) -> ParamLayout:
        head = self.critic_mlp
        return ParamLayout(f"twin-{head.tag}", [*head.blocks("q1."), *head.blocks("q2.")])


@dataclass
class ActionSample:
    """Squashed action batch with its log-density"""
    squashed: Tensor    # (B, action_dim) in (-1, 1)
    log_prob: Tensor    # (B,)
    mean: Tensor        # (B, action_dim) tanh of the Gaussian mean


@dataclass
class PolicyAction:
    """One environment action"""
    action: np.ndarray      # continuous part in [-1, 1], gripper in {0, 1}
    squashed: np.ndarray    # raw tanh output stored for the critic
    log_prob: float


def actor_init(arch: PolicyArch, rng: np.random.Generator) -> ParamVector:
    params = mlp_init(arch.actor_mlp, rng)
    logger.info(f"Actor initialized ({arch.actor_mlp.param_count()} parameters)")
    return params


def critic_init(arch: PolicyArch, rng: np.random.Generator) -> ParamVector:
    params = ParamVector(arch.critic_layout())
    mlp_init(arch.critic_mlp, rng, params, "q1.")
    mlp_init(arch.critic_mlp, rng, params, "q2.")
    logger.info(f"Twin critic initialized ({2 * arch.critic_mlp.param_count()} parameters)")
    return params


def actor_distribution(params: Union[ParamVector, Tensor], state: Tensor, arch: PolicyArch,
                       tape: Tape, name: str = "actor") -> Tuple[Tensor, Tensor]:
    """Gaussian mean and clamped log standard deviation, each (B, action_dim)"""
    blocks = unpack(bind(tape, params, name), arch.actor_layout())
    out = mlp_apply(blocks, state, arch.actor_mlp)
    n = arch.action_dim
    mean = take(out, (slice(None), slice(0, n)))
    log_std = clip(take(out, (slice(None), slice(n, 2 * n))), *arch.log_std_bounds)
    return mean, log_std


def sample_action(params: Union[ParamVector, Tensor], state: Tensor, arch: PolicyArch,
                  rng: np.random.Generator, tape: Tape, name: str = "actor") -> ActionSample:
    """
    Reparameterized tanh-Gaussian sample

    log pi(a|s) = sum_i [log N(u_i; mu_i, sigma_i) - log(1 - tanh(u_i)^2)], with the
    correction written as 2 (log 2 - u - softplus(-2u)) for stability.
    """
    mean, log_std = actor_distribution(params, state, arch, tape, name)
    eps = rng.standard_normal(mean.shape)
    pre = mean + exp(log_std) * eps
    gaussian = sum_(log_std + (0.5 * eps * eps + HALF_LOG_2PI), axis=1) * -1.0
    correction = sum_((LOG_2 - pre - softplus(pre * -2.0)) * 2.0, axis=1)
    return ActionSample(tanh(pre), gaussian - correction, tanh(mean))


def policy_state(proprio: np.ndarray, z: Union[np.ndarray, Tensor], tape: Tape) -> Tensor:
    """(B, proprio + latent) state rows from proprioception and embeddings"""
    proprio = np.atleast_2d(np.asarray(proprio, dtype=np.float64))
    if isinstance(z, Tensor):
        z_rows = z if z.ndim == 2 else reshape(z, (1, -1))
    else:
        z_rows = tape.constant(np.atleast_2d(np.asarray(z, dtype=np.float64)))
    if z_rows.shape[0] != proprio.shape[0]:
        raise ShapeMismatchError(f"{proprio.shape[0]} proprioception rows vs {z_rows.shape[0]} embeddings")
    return concat([tape.constant(proprio), z_rows], axis=1)


def policy_act(params: ParamVector, proprio: np.ndarray, z: np.ndarray, arch: PolicyArch,
               mode: str = "mean", rng: Optional[np.random.Generator] = None) -> PolicyAction:
    """
    Action for one state

    Args:
        params: Actor weights
        proprio: Proprioception vector
        z: Embedding
        arch: Policy shape
        mode: 'mean' (deterministic) or 'sample'
        rng: Required in sample mode

    Returns:
        PolicyAction; the simulator maps the continuous part to velocity limits
    """
    proprio = np.asarray(proprio, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (np.all(np.isfinite(proprio)) and np.all(np.isfinite(z))):
        raise NonFiniteError("policy input contains NaN or Inf")
    if proprio.shape != (arch.proprio_dim,) or z.shape != (arch.latent_dim,):
        raise ShapeMismatchError(f"policy expects ({arch.proprio_dim},) and ({arch.latent_dim},), "
                                 f"got {proprio.shape} and {z.shape}")
    tape = Tape(enabled=False)
    state = policy_state(proprio, z, tape)
    if mode == "mean":
        mean, _ = actor_distribution(params, state, arch, tape)
        squashed, log_prob = np.tanh(mean.value[0]), float("nan")
    elif mode == "sample":
        if rng is None:
            raise ParameterRangeError("sample mode needs a random generator")
        sample = sample_action(params, state, arch, rng, tape)
        squashed, log_prob = sample.squashed.value[0], float(sample.log_prob.value[0])
    else:
        raise ParameterRangeError(f"unknown policy mode '{mode}'")
    return PolicyAction(to_env_action(squashed), squashed.copy(), log_prob)


def to_env_action(squashed: np.ndarray) -> np.ndarray:
    """Threshold the gripper component at 0"""
    action = np.array(squashed, dtype=np.float64)
    action[-1] = 1.0 if squashed[-1] > 0.0 else 0.0
    return action


def critic_values(params: Union[ParamVector, Tensor], state: Tensor, action: Union[Tensor, np.ndarray],
                  arch: PolicyArch, tape: Tape, name: str = "critic") -> Tuple[Tensor, Tensor]:
    """Twin Q values, each (B,)"""
    blocks = unpack(bind(tape, params, name), arch.critic_layout())
    inputs = concat([state, action], axis=1)
    q1 = mlp_apply(blocks, inputs, arch.critic_mlp, "q1.")
    q2 = mlp_apply(blocks, inputs, arch.critic_mlp, "q2.")
    return reshape(q1, (-1,)), reshape(q2, (-1,))
