"""
Episode Replay Buffer - ring of immutable episodes with a uniform transition sampler
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.config import settings
from src.core.exceptions import ParameterRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    """(s_p, p, a, r, s_p', p', done)"""
    proprio: np.ndarray
    cloud: np.ndarray
    action: np.ndarray
    reward: float
    next_proprio: np.ndarray
    next_cloud: np.ndarray
    done: bool


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.flags.writeable = False
    return out


class Episode:
    """
    Contiguous trajectory stored as T + 1 states and T actions

    Step t's next state is row t + 1 of the same arrays, so consecutive
    transitions always agree. Arrays are read-only once constructed.

    Attributes:
        proprio: (T + 1, 14)
        clouds: (T + 1, N, 3) float32
        actions: (T, 7) squashed policy outputs
        rewards: (T,)
        dones: (T,)
        success: Whether any step met the goal
    """

    def __init__(self, proprio, clouds, actions, rewards, dones, success: bool = False,
                 episode_id: Optional[int] = None):
        self.proprio = _frozen(proprio, np.float64)
        self.clouds = _frozen(clouds, np.float32)
        self.actions = _frozen(actions, np.float64)
        self.rewards = _frozen(rewards, np.float64)
        self.dones = _frozen(dones, bool)
        self.success = bool(success)
        self.episode_id = episode_id
        length = len(self.actions)
        if length < 1 or length > settings.EPISODE_MAX_STEPS:
            raise ParameterRangeError(f"episode length {length} outside [1, {settings.EPISODE_MAX_STEPS}]")
        if (len(self.proprio) != length + 1 or len(self.clouds) != length + 1
                or len(self.rewards) != length or len(self.dones) != length):
            raise ShapeMismatchError("episode arrays disagree on the number of steps")
        if not np.all(np.isfinite(self.rewards)):
            raise ParameterRangeError("episode rewards must be finite")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def transition(self, t: int) -> Transition:
        return Transition(self.proprio[t], self.clouds[t], self.actions[t], float(self.rewards[t]),
                          self.proprio[t + 1], self.clouds[t + 1], bool(self.dones[t]))


class EpisodeRecorder:
    """Collects one rollout and seals it into an Episode"""

    def __init__(self, proprio: np.ndarray, cloud: np.ndarray):
        self.proprio = [np.asarray(proprio)]
        self.clouds = [np.asarray(cloud, dtype=np.float32)]
        self.actions, self.rewards, self.dones = [], [], []
        self.success = False

    def add(self, action, reward: float, done: bool, next_proprio, next_cloud, success: bool = False):
        self.actions.append(np.asarray(action))
        self.rewards.append(reward)
        self.dones.append(done)
        self.proprio.append(np.asarray(next_proprio))
        self.clouds.append(np.asarray(next_cloud, dtype=np.float32))
        self.success = self.success or success

    def __len__(self) -> int:
        return len(self.actions)

    def seal(self, episode_id: Optional[int] = None) -> Episode:
        return Episode(np.stack(self.proprio), np.stack(self.clouds), np.stack(self.actions),
                       np.asarray(self.rewards), np.asarray(self.dones), self.success, episode_id)


@dataclass
class TransitionBatch:
    """Stacked transitions for one SAC update"""
    proprio: np.ndarray         # (B, 14)
    clouds: np.ndarray          # (B, N, 3)
    actions: np.ndarray         # (B, 7)
    rewards: np.ndarray         # (B,)
    next_proprio: np.ndarray
    next_clouds: np.ndarray
    dones: np.ndarray           # (B,) float

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def stack(cls, transitions: List[Transition]) -> "TransitionBatch":
        return cls(np.stack([t.proprio for t in transitions]),
                   np.stack([t.cloud for t in transitions]).astype(np.float64),
                   np.stack([t.action for t in transitions]),
                   np.array([t.reward for t in transitions]),
                   np.stack([t.next_proprio for t in transitions]),
                   np.stack([t.next_cloud for t in transitions]).astype(np.float64),
                   np.array([float(t.done) for t in transitions]))


class ReplayBuffer:
    """
    Fixed-capacity ring of episodes

    The oldest episode is overwritten when full. Sampling is uniform over
    all stored transitions.
    """

    def __init__(self, capacity: int = settings.BUFFER_CAPACITY_EPISODES):
        if capacity < 1:
            raise ParameterRangeError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.episodes: List[Optional[Episode]] = [None] * capacity
        self.ptr, self.size = 0, 0
        self.added = 0
        logger.info(f"Replay buffer initialized (capacity={capacity} episodes)")

    def __len__(self) -> int:
        return self.size

    def add(self, episode: Episode) -> int:
        """Store an episode and return its slot"""
        slot = self.ptr
        if episode.episode_id is None:
            episode.episode_id = self.added
        self.episodes[slot] = episode
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.added += 1
        return slot

    def stored(self) -> List[Episode]:
        """Episodes in slot order; the list is a snapshot, episodes are shared read-only"""
        return [e for e in self.episodes[:self.size]]

    @property
    def n_transitions(self) -> int:
        return sum(len(e) for e in self.stored())

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform over transitions: pick an episode by length, then a step"""
        episodes = self.stored()
        if not episodes:
            raise ParameterRangeError("cannot sample from an empty buffer")
        lengths = np.array([len(e) for e in episodes], dtype=np.float64)
        picks = rng.choice(len(episodes), size=batch_size, p=lengths / lengths.sum())
        transitions = [episodes[i].transition(int(rng.integers(len(episodes[i])))) for i in picks]
        return TransitionBatch.stack(transitions)
