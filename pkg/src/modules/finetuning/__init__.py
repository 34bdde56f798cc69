"""Stage II: task environment, episode buffer, contrastive retrieval, SAC and the training loop"""
from .environment import (BandEnv, Observation, PRESETS, StepResult, TaskLayout, TaskPreset,
                          get_preset, reference_action, reward, reward_from_cd)
from .replay_buffer import Episode, EpisodeRecorder, ReplayBuffer, Transition, TransitionBatch
from .contrastive import (ContrastiveBatch, KeyEmbeddingCache, d_sg, dtw_align, ema_update,
                          info_nce, matched_index, select_query_key, top_m_similar)
from .sac import (SacAgent, SacLosses, actor_loss, alpha_loss, critic_loss, critic_targets,
                  sac_update, soft_update)
from .trainer import FinetuneResult, FinetuneTrainer, finetune_run, load_agent

__all__ = ['BandEnv', 'Observation', 'PRESETS', 'StepResult', 'TaskLayout', 'TaskPreset',
           'get_preset', 'reference_action', 'reward', 'reward_from_cd',
           'Episode', 'EpisodeRecorder', 'ReplayBuffer', 'Transition', 'TransitionBatch',
           'ContrastiveBatch', 'KeyEmbeddingCache', 'd_sg', 'dtw_align', 'ema_update',
           'info_nce', 'matched_index', 'select_query_key', 'top_m_similar',
           'SacAgent', 'SacLosses', 'actor_loss', 'alpha_loss', 'critic_loss', 'critic_targets',
           'sac_update', 'soft_update',
           'FinetuneResult', 'FinetuneTrainer', 'finetune_run', 'load_agent']
