"""
Soft Actor-Critic over (proprioception, embedding) states

Twin critics with a smoothed target copy, a tanh-Gaussian actor and automatic
entropy-temperature tuning. The critic loss also trains the query encoder;
target values use the key encoder.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from src.config import SacConfig, settings
from src.core.exceptions import NonFiniteError, TrainingDivergedError
from src.modules.diffcore import Adam, ParamLayout, ParamVector, Tape, Tensor, backward
from src.modules.diffcore.tensor import abs_, concat, mean, reshape, square
from src.modules.networks import (EncoderArch, PolicyAction, PolicyArch, actor_init, bind,
                                  critic_init, critic_values, embed, embed_many, encode,
                                  policy_act, policy_state, sample_action)
from .contrastive import ema_update
from .replay_buffer import TransitionBatch

logger = logging.getLogger(__name__)

LOG_ALPHA_LAYOUT = ParamLayout("log_alpha", [("log_alpha", (1,))])
PARAM_SETS = ("encoder", "key_encoder", "actor", "critic", "critic_target", "log_alpha")


@dataclass
class SacLosses:
    critic: float
    actor: float
    alpha: float
    entropy: float
    q_mean: float

    def as_dict(self) -> Dict[str, float]:
        return {"critic_loss": self.critic, "actor_loss": self.actor, "alpha_loss": self.alpha,
                "entropy": self.entropy, "q_mean": self.q_mean}


@dataclass
class SacAgent:
    """
    Networks and optimizers of Stage II

    Parameter vectors are replaced, never written in place, so references
    held elsewhere (the key encoder in particular) are unaffected by updates.
    """
    policy_arch: PolicyArch
    encoder_arch: EncoderArch
    encoder: ParamVector
    key_encoder: ParamVector
    actor: ParamVector
    critic: ParamVector
    critic_target: ParamVector
    log_alpha: ParamVector
    lr: float = settings.ADAM_LR_FINETUNE
    optimizers: Dict[str, Adam] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("encoder", "actor", "critic", "log_alpha"):
            if name not in self.optimizers:
                self.optimizers[name] = Adam(getattr(self, name), lr=self.lr)

    @classmethod
    def create(cls, policy_arch: PolicyArch, encoder_arch: EncoderArch, encoder: ParamVector,
               rng: np.random.Generator, config: SacConfig = SacConfig()) -> "SacAgent":
        critic = critic_init(policy_arch, rng)
        log_alpha = ParamVector(LOG_ALPHA_LAYOUT, np.array([np.log(config.init_alpha)]))
        return cls(policy_arch, encoder_arch, encoder, encoder.copy(), actor_init(policy_arch, rng),
                   critic, critic.copy(), log_alpha, config.lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    def params(self) -> Dict[str, ParamVector]:
        return {name: getattr(self, name) for name in PARAM_SETS}

    def embed(self, cloud: np.ndarray) -> np.ndarray:
        return embed(self.encoder, cloud, self.encoder_arch)

    def act(self, proprio: np.ndarray, cloud: np.ndarray, mode: str = "mean",
            rng: Optional[np.random.Generator] = None) -> PolicyAction:
        return policy_act(self.actor, proprio, self.embed(cloud), self.policy_arch, mode, rng)

    def apply(self, name: str, grads: ParamVector):
        setattr(self, name, self.optimizers[name].step(grads))


def _soft_min(q1: Tensor, q2: Tensor) -> Tensor:
    """Elementwise min(q1, q2) = (q1 + q2)/2 - |q1 - q2|/2"""
    return (q1 + q2) * 0.5 - abs_(q1 - q2) * 0.5


def critic_targets(agent: SacAgent, batch: TransitionBatch, config: SacConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')), a' ~ pi(s')"""
    tape = Tape(enabled=False)
    z_next = embed_many(agent.key_encoder, batch.next_clouds, agent.encoder_arch)
    state = policy_state(batch.next_proprio, z_next, tape)
    sample = sample_action(agent.actor, state, agent.policy_arch, rng, tape)
    q1, q2 = critic_values(agent.critic_target, state, sample.squashed, agent.policy_arch, tape)
    soft_value = np.minimum(q1.value, q2.value) - agent.alpha * sample.log_prob.value
    return batch.rewards + config.gamma * (1.0 - batch.dones) * soft_value


def encode_batch(encoder, clouds: np.ndarray, arch: EncoderArch, tape: Tape) -> Tensor:
    """(B, N_z) mean-mode embeddings recorded on the tape"""
    encoder_t = bind(tape, encoder, "encoder")
    rows = [reshape(encode(encoder_t, cloud, arch, tape=tape).z, (1, -1)) for cloud in clouds]
    return concat(rows, axis=0)


def critic_loss(critic, encoder, agent: SacAgent, batch: TransitionBatch,
                targets: np.ndarray, tape: Tape):
    """
    Sum of the twin mean squared Bellman errors

    Returns:
        (loss tensor, embeddings tensor, q1 tensor)
    """
    z = encode_batch(encoder, batch.clouds, agent.encoder_arch, tape)
    state = policy_state(batch.proprio, z, tape)
    q1, q2 = critic_values(bind(tape, critic, "critic"), state, tape.constant(batch.actions),
                           agent.policy_arch, tape)
    loss = mean(square(q1 - targets)) + mean(square(q2 - targets))
    return loss, z, q1


def actor_loss(actor, agent: SacAgent, proprio: np.ndarray, z: np.ndarray,
               rng: np.random.Generator, tape: Tape):
    """
    mean(alpha log pi(a|s) - min Q(s, a)) with the critic held constant

    Returns:
        (loss tensor, log-probabilities array)
    """
    state = policy_state(proprio, z, tape)
    sample = sample_action(bind(tape, actor, "actor"), state, agent.policy_arch, rng, tape)
    q1, q2 = critic_values(tape.constant(agent.critic.data), state, sample.squashed,
                           agent.policy_arch, tape)
    loss = mean(sample.log_prob * agent.alpha - _soft_min(q1, q2))
    return loss, sample.log_prob.value.copy()


def alpha_loss(log_alpha, log_probs: np.ndarray, target_entropy: float, tape: Tape) -> Tensor:
    """-mean(log_alpha (log pi + target entropy)); raises alpha while entropy is below target"""
    log_alpha_t = bind(tape, log_alpha, "log_alpha")
    return mean(log_alpha_t * (np.asarray(log_probs) + target_entropy)) * -1.0


def _checked(loss: Tensor, name: str, diagnostics: Dict) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite {name} loss", {**diagnostics, name: value})
    diagnostics[name] = value
    return value


def sac_update(agent: SacAgent, batch: TransitionBatch, config: SacConfig,
               rng: np.random.Generator) -> SacLosses:
    """
    One critic, actor and temperature step followed by target smoothing

    Args:
        agent: Networks and optimizers, updated in place
        batch: Transitions sampled uniformly from the buffer
        config: SAC settings
        rng: Policy sampling noise

    Returns:
        SacLosses
    """
    diagnostics: Dict = {}
    try:
        targets = critic_targets(agent, batch, config, rng)

        tape = Tape()
        loss_c, z, q1 = critic_loss(agent.critic, agent.encoder, agent, batch, targets, tape)
        critic_value = _checked(loss_c, "critic", diagnostics)
        grads = backward(tape, loss_c)
        z_values = z.value.copy()
        agent.apply("critic", grads["critic"])
        agent.apply("encoder", grads["encoder"])

        tape = Tape()
        loss_a, log_probs = actor_loss(agent.actor, agent, batch.proprio, z_values, rng, tape)
        actor_value = _checked(loss_a, "actor", diagnostics)
        agent.apply("actor", backward(tape, loss_a)["actor"])

        tape = Tape()
        loss_t = alpha_loss(agent.log_alpha, log_probs, config.resolved_target_entropy(), tape)
        alpha_value = _checked(loss_t, "alpha", diagnostics)
        agent.apply("log_alpha", backward(tape, loss_t)["log_alpha"])
    except NonFiniteError as e:
        raise TrainingDivergedError(f"non-finite value during the SAC update: {e}", diagnostics)

    agent.critic_target = soft_update(agent.critic_target, agent.critic, config.tau_target)
    return SacLosses(critic_value, actor_value, alpha_value, float(-np.mean(log_probs)),
                     float(np.mean(q1.value)))


def soft_update(target: ParamVector, online: ParamVector, tau: float) -> ParamVector:
    """tau * online + (1 - tau) * target"""
    return ema_update(target, online, 1.0 - tau)
