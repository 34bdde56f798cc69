"""
Stage II Trainer - SAC rollouts with the contrastive auxiliary task
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from src.config import ArchitectureConfig, RunConfig, settings
from src.core.exceptions import (ConfigError, LayoutMismatchError, NonFiniteError,
                                 TrainingDivergedError)
from src.modules.data import write_table
from src.modules.diffcore import Tape, backward
from src.modules.networks import (PolicyArch, ShapeModel, bind, encode, encoder_init,
                                  load_checkpoint, save_checkpoint, to_env_action)
from .contrastive import KeyEmbeddingCache, ema_update, info_nce, select_query_key
from .environment import BandEnv
from .replay_buffer import EpisodeRecorder, ReplayBuffer
from .sac import PARAM_SETS, SacAgent, SacLosses, sac_update

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["episode", "step", "length", "return", "success", "final_cd", "alpha",
                 "critic_loss", "actor_loss", "alpha_loss", "infonce_loss"]


@dataclass
class FinetuneResult:
    agent: SacAgent
    checkpoint: Path
    curve: List[Dict] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return float(np.mean([row["success"] for row in self.curve])) if self.curve else 0.0


def architecture_from_meta(meta: Dict, fallback: ArchitectureConfig) -> ArchitectureConfig:
    """Network shapes recorded in a checkpoint, the run's own when absent"""
    if "architecture" not in meta:
        return fallback
    return RunConfig.from_dict({"architecture": meta["architecture"]}).architecture


def policy_arch_for(architecture: ArchitectureConfig) -> PolicyArch:
    return PolicyArch(latent_dim=architecture.latent_dim, hidden=tuple(architecture.policy_hidden))


def load_agent(directory: Union[str, Path], config: RunConfig) -> SacAgent:
    """Rebuild a Stage II agent from its checkpoint"""
    checkpoint = load_checkpoint(directory)
    missing = [name for name in PARAM_SETS if name not in checkpoint]
    if missing:
        raise ConfigError(f"{directory} is not a Stage II checkpoint (missing {', '.join(missing)})")
    architecture = architecture_from_meta(checkpoint.meta, config.architecture)
    encoder_arch, _ = ShapeModel.archs_for(architecture)
    sets = {name: checkpoint[name] for name in PARAM_SETS}
    return SacAgent(policy_arch_for(architecture), encoder_arch, lr=config.sac.lr, **sets)


class FinetuneTrainer:
    """
    Stage II training loop

    The encoder starts from a Stage I checkpoint (or from scratch for the
    no-pretrain variant). Every environment step after warmup runs
    `utd_ratio` SAC updates; every finished episode runs one contrastive
    update unless the variant disables it. The key encoder follows the query
    encoder by EMA after every update that changed the encoder.
    """

    def __init__(self, config: RunConfig, out: Path):
        self.config = config
        self.out = Path(out)
        self.variant = config.finetune_variant
        self.rng = np.random.default_rng(config.seed)

        architecture = config.architecture
        if self.variant == "no-pretrain":
            encoder_arch, _ = ShapeModel.archs_for(architecture)
            encoder = encoder_init(encoder_arch, self.rng)
        else:
            checkpoint = load_checkpoint(config.checkpoint)
            if "encoder" not in checkpoint:
                raise ConfigError(f"checkpoint {config.checkpoint} holds no encoder")
            architecture = architecture_from_meta(checkpoint.meta, architecture)
            encoder_arch, _ = ShapeModel.archs_for(architecture)
            encoder = checkpoint["encoder"]
            if encoder.layout != encoder_arch.layout():
                raise LayoutMismatchError(f"checkpoint encoder layout {encoder.layout.arch} does not "
                                          f"match {encoder_arch.tag}")
        self.architecture = architecture

        self.agent = SacAgent.create(policy_arch_for(architecture), encoder_arch, encoder,
                                     self.rng, config.sac)
        self.buffer = ReplayBuffer(config.sac.buffer_capacity)
        self.env = BandEnv(config.task, config.sac, config.data, seed=config.seed + 1)
        self.total_steps = 0
        self.episode = 0
        self.curve: List[Dict] = []
        logger.info(f"Stage II trainer initialized (variant={self.variant}, "
                    f"preset={config.task.preset}, latent={architecture.latent_dim})")

    @property
    def contrastive_enabled(self) -> bool:
        return self.variant != "no-contrastive"

    def checkpoint_meta(self) -> Dict:
        return {
            "stage": "finetune",
            "architecture": dataclasses.asdict(self.architecture),
            "policy_hidden": list(self.architecture.policy_hidden),
            "preset": self.config.task.preset,
            "variant": self.variant,
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "step": self.total_steps,
            "episodes": self.episode,
        }

    def save(self, directory: Path) -> Path:
        return save_checkpoint(directory, self.agent.params(), self.checkpoint_meta(), self.rng)

    # ==================== Updates ====================

    def _follow_key(self):
        self.agent.key_encoder = ema_update(self.agent.key_encoder, self.agent.encoder,
                                            self.config.contrastive.momentum)

    def sac_updates(self) -> List[SacLosses]:
        cfg = self.config.sac
        losses = []
        for _ in range(cfg.utd_ratio):
            batch = self.buffer.sample(cfg.batch_size, self.rng)
            losses.append(sac_update(self.agent, batch, cfg, self.rng))
            self._follow_key()
        return losses

    def contrastive_update(self) -> Optional[float]:
        """
        InfoNCE step on queries drawn from stored episodes

        Returns:
            Mean InfoNCE loss, None when the buffer is still too small
        """
        cfg = self.config.contrastive
        episodes = self.buffer.stored()
        if len(episodes) < cfg.top_m + 1:
            return None
        agent = self.agent
        cache = KeyEmbeddingCache(agent.key_encoder, agent.encoder_arch, cfg.retrieval_points)
        tape = Tape()
        encoder_t = bind(tape, agent.encoder, "encoder")

        def encode_query(cloud):
            return encode(encoder_t, cloud, agent.encoder_arch, tape=tape).z

        total = None
        for _ in range(cfg.episodes_per_batch):
            i = int(self.rng.integers(len(episodes)))
            t = int(self.rng.integers(len(episodes[i].clouds)))
            batch = select_query_key(episodes, i, t, cfg.top_m, cfg.negatives, self.rng, cache,
                                     encode_query, cfg.tau)
            loss = info_nce(batch)
            total = loss if total is None else total + loss
        value = total.item() / cfg.episodes_per_batch
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite InfoNCE loss after episode {self.episode}",
                                        {"episode": self.episode, "infonce": value})
        weighted = total * (cfg.weight / cfg.episodes_per_batch)
        agent.apply("encoder", backward(tape, weighted)["encoder"])
        self._follow_key()
        return value

    # ==================== Rollouts ====================

    def _choose(self, proprio: np.ndarray, cloud: np.ndarray) -> np.ndarray:
        """Squashed action in [-1, 1]^7; uniform during warmup"""
        if self.total_steps < self.config.sac.warmup_steps:
            return self.rng.uniform(-1.0, 1.0, settings.ACTION_DIM)
        return self.agent.act(proprio, cloud, mode="sample", rng=self.rng).squashed

    def run_episode(self) -> Dict:
        observation = self.env.reset()
        recorder = EpisodeRecorder(observation.proprio, observation.cloud)
        updates: List[SacLosses] = []
        result = None
        done = False
        while not done:
            squashed = self._choose(observation.proprio, observation.cloud)
            result = self.env.step(to_env_action(squashed))
            recorder.add(squashed, result.reward, result.done, result.observation.proprio,
                         result.observation.cloud, result.success)
            observation = result.observation
            done = result.done
            self.total_steps += 1
            if self.total_steps > self.config.sac.warmup_steps and len(self.buffer):
                updates.extend(self.sac_updates())

        episode = recorder.seal()
        self.buffer.add(episode)
        infonce = self.contrastive_update() if self.contrastive_enabled else None
        row = {
            "episode": self.episode,
            "step": self.total_steps,
            "length": len(episode),
            "return": episode.episode_return,
            "success": int(episode.success),
            "final_cd": result.cd,
            "alpha": self.agent.alpha,
            "critic_loss": _mean(u.critic for u in updates),
            "actor_loss": _mean(u.actor for u in updates),
            "alpha_loss": _mean(u.alpha for u in updates),
            "infonce_loss": float("nan") if infonce is None else infonce,
        }
        self.curve.append(row)
        self.episode += 1
        return row

    def run(self, episodes: int) -> FinetuneResult:
        header = self.config.header(stage="finetune", variant=self.variant,
                                    preset=self.config.task.preset)
        progress = tqdm(range(episodes), desc="finetune", unit="episode")
        try:
            for _ in progress:
                row = self.run_episode()
                progress.set_postfix(ret=f"{row['return']:.1f}", ok=row["success"])
                logger.info(f"Episode {row['episode']}: return={row['return']:.2f} "
                            f"success={row['success']} cd={row['final_cd']:.5f} "
                            f"steps={row['step']}")
        except NonFiniteError as e:
            raise TrainingDivergedError(f"non-finite value in episode {self.episode}: {e}",
                                        {"episode": self.episode, "step": self.total_steps})

        checkpoint = self.save(self.out / "checkpoint")
        write_table(self.curve, self.out / "reward_curve.csv", header, CURVE_COLUMNS)
        result = FinetuneResult(self.agent, checkpoint, self.curve)
        logger.info(f"Stage II finished after {self.episode} episodes "
                    f"({self.total_steps} steps, success rate {result.success_rate:.2f})")
        return result


def _mean(values) -> float:
    values = list(values)
    return float(np.mean(values)) if values else float("nan")


def finetune_run(config: RunConfig, out: Optional[Path] = None,
                 episodes: Optional[int] = None) -> FinetuneResult:
    """
    Train the policy on the configured task preset

    Args:
        config: Run configuration (checkpoint, variant, preset, SAC and contrastive settings)
        out: Output directory, config.out when omitted
        episodes: Episode count, config.budget.finetune_episodes when omitted

    Returns:
        FinetuneResult
    """
    trainer = FinetuneTrainer(config, Path(out or config.out))
    return trainer.run(config.budget.finetune_episodes if episodes is None else episodes)
