"""
Contrastive Auxiliary Task - episode retrieval, DTW-aligned positives, InfoNCE, EMA keys

Retrieval embeddings come from the key encoder in mean mode and are cached
for one update; the query embedding is computed on the training tape so the
InfoNCE gradient reaches the query encoder.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from src.config import settings
from src.core.exceptions import BufferTooSmallError, ParameterRangeError, ShapeMismatchError
from src.modules.diffcore import ParamVector, Tape, Tensor
from src.modules.diffcore.tensor import logsumexp, matmul, take
from src.modules.networks import EncoderArch, embed_many
from .replay_buffer import Episode

logger = logging.getLogger(__name__)

WarpPath = List[Tuple[int, int]]


@dataclass
class ContrastiveBatch:
    """
    Query, positive key and negative keys

    Attributes:
        z_q: Query embedding (tensor when it should receive gradients)
        z_plus: Positive key, (N_z,)
        z_minus: Negative keys, (K, N_z)
        tau: Temperature
        positive_episode: Buffer index of the episode holding the positive
        t_prime: Time index of the positive
        negative_sources: (episode, time) of every negative
    """
    z_q: Union[Tensor, np.ndarray]
    z_plus: np.ndarray
    z_minus: np.ndarray
    tau: float = settings.CONTRASTIVE_TAU
    positive_episode: Optional[int] = None
    t_prime: Optional[int] = None
    negative_sources: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.z_minus = np.atleast_2d(np.asarray(self.z_minus, dtype=np.float64))
        if len(self.z_minus) < 1:
            raise ParameterRangeError("a contrastive batch needs at least one negative")
        n = self.z_q.shape[-1]
        if np.shape(self.z_plus) != (n,) or self.z_minus.shape[1] != n:
            raise ShapeMismatchError("query and key embeddings differ in length")


# ==================== Similarity and alignment ====================

def d_sg(embeddings_i: np.ndarray, embeddings_j: np.ndarray) -> float:
    """
    Start-and-goal similarity z_1^i . z_1^j + z_T^i . z_T^j; larger is more similar

    Args:
        embeddings_i: (T_i, N_z) key embeddings of an episode's clouds
        embeddings_j: (T_j, N_z)
    """
    a, b = np.asarray(embeddings_i), np.asarray(embeddings_j)
    if len(a) < 2 or len(b) < 2:
        raise ParameterRangeError("d_sg needs episodes with at least two embeddings")
    return float(a[0] @ b[0] + a[-1] @ b[-1])


def top_m_similar(endpoints: Sequence[np.ndarray], i: int, m: int) -> List[int]:
    """
    Indices of the m episodes most similar to episode i under d_sg, ties by index

    Args:
        endpoints: Per episode, an array whose first and last rows are its start and goal embeddings
        i: Reference episode
        m: Number of candidates
    """
    scores = [(j, d_sg(endpoints[i], endpoints[j])) for j in range(len(endpoints)) if j != i]
    scores.sort(key=lambda item: (-item[1], item[0]))
    return [j for j, _ in scores[:m]]


def dtw_align(seq_a: np.ndarray, seq_b: np.ndarray) -> Tuple[float, WarpPath]:
    """
    Dynamic time warping with Euclidean local cost over the full window

    Args:
        seq_a: (n, d) sequence
        seq_b: (m, d) sequence

    Returns:
        (accumulated cost, monotone path from (0, 0) to (n - 1, m - 1));
        the traceback prefers the diagonal on ties
    """
    a = np.atleast_2d(np.asarray(seq_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(seq_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ParameterRangeError("dtw_align needs non-empty sequences")
    local = cdist(a, b)
    n, m = local.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        for j in range(1, m + 1):
            row[j] = local[i - 1, j - 1] + min(prev[j - 1], prev[j], row[j - 1])

    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        moves = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j),
                 (acc[i, j - 1], i, j - 1))
        _, i, j = min(moves, key=lambda move: move[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return float(acc[n, m]), path


def matched_index(path: WarpPath, t: int) -> int:
    """Index in the second sequence aligned with t; the lower median when several are"""
    matches = sorted(j for i, j in path if i == t)
    if not matches:
        raise ParameterRangeError(f"time index {t} is not on the path")
    return matches[(len(matches) - 1) // 2]


# ==================== Retrieval ====================

class KeyEmbeddingCache:
    """
    Key-encoder embeddings of buffer episodes for one update

    Retrieval runs on the first `points` rows of each cloud; clouds are
    stored in farthest-point order, so the prefix is itself a spread-out subset.
    """

    def __init__(self, key_params: ParamVector, arch: EncoderArch,
                 points: int = settings.CONTRASTIVE_RETRIEVAL_POINTS):
        self.key_params = key_params
        self.arch = arch
        self.points = points
        self._sequences: Dict[int, np.ndarray] = {}
        self._endpoints: Dict[int, np.ndarray] = {}

    def _embed(self, clouds: np.ndarray) -> np.ndarray:
        return embed_many(self.key_params, clouds[:, :self.points], self.arch)

    def sequence(self, index: int, episode: Episode) -> np.ndarray:
        if index not in self._sequences:
            self._sequences[index] = self._embed(episode.clouds)
        return self._sequences[index]

    def endpoints(self, index: int, episode: Episode) -> np.ndarray:
        """(2, N_z) start and goal embeddings"""
        if index in self._sequences:
            seq = self._sequences[index]
            return np.stack([seq[0], seq[-1]])
        if index not in self._endpoints:
            self._endpoints[index] = self._embed(episode.clouds[[0, -1]])
        return self._endpoints[index]

    def full(self, clouds: np.ndarray) -> np.ndarray:
        """Embeddings of complete clouds, used for the keys themselves"""
        return embed_many(self.key_params, clouds, self.arch)


def select_query_key(episodes: Sequence[Episode], i: int, t: int, m: int, k: int,
                     rng: np.random.Generator, cache: KeyEmbeddingCache,
                     encode_query: Callable[[np.ndarray], Union[Tensor, np.ndarray]],
                     tau: float = settings.CONTRASTIVE_TAU) -> ContrastiveBatch:
    """
    Build one query/key set

    Args:
        episodes: Buffer snapshot
        i: Query episode
        t: Query time index in episode i
        m: Number of d_sg candidates
        k: Number of negatives
        rng: Draws the negatives
        cache: Key embeddings for this update
        encode_query: Query-encoder embedding of a cloud
        tau: Temperature

    Returns:
        ContrastiveBatch
    """
    if len(episodes) < m + 1:
        raise BufferTooSmallError(f"key selection needs {m + 1} episodes, buffer holds {len(episodes)}")
    query_episode = episodes[i]
    endpoints = [cache.endpoints(j, e) for j, e in enumerate(episodes)]
    candidates = top_m_similar(endpoints, i, m)

    reference = cache.sequence(i, query_episode)
    best, best_cost, best_path = None, np.inf, None
    for j in candidates:
        cost, path = dtw_align(reference, cache.sequence(j, episodes[j]))
        if cost < best_cost:
            best, best_cost, best_path = j, cost, path
    t_prime = matched_index(best_path, t)

    others = [j for j in range(len(episodes)) if j != i]
    sources = []
    for _ in range(k):
        j = others[int(rng.integers(len(others)))]
        sources.append((j, int(rng.integers(len(episodes[j].clouds)))))
    keys = cache.full(np.stack([episodes[best].clouds[t_prime]] +
                               [episodes[j].clouds[s] for j, s in sources]))
    z_q = encode_query(np.asarray(query_episode.clouds[t], dtype=np.float64))
    return ContrastiveBatch(z_q, keys[0], keys[1:], tau, best, t_prime, sources)


# ==================== Losses and updates ====================

def info_nce(batch: ContrastiveBatch) -> Tensor:
    """
    -log softmax of the positive logit among (positive, negatives), logits z_q . key / tau

    Returns:
        Scalar tensor on the tape of z_q (a disabled tape for array queries)
    """
    z_q = batch.z_q
    if not isinstance(z_q, Tensor):
        z_q = Tape(enabled=False).constant(np.asarray(z_q, dtype=np.float64))
    keys = np.vstack([batch.z_plus[None, :], batch.z_minus])
    logits = matmul(z_q, keys.T) * (1.0 / batch.tau)
    return logsumexp(logits, axis=-1) - take(logits, 0)


def ema_update(phi_key: ParamVector, phi: ParamVector, m: float) -> ParamVector:
    """m * phi_key + (1 - m) * phi, returned as a new vector"""
    if not 0.0 <= m <= 1.0:
        raise ParameterRangeError(f"momentum must lie in [0, 1], got {m}")
    phi_key.check_layout(phi)
    return phi_key.like(m * phi_key.data + (1.0 - m) * phi.data)
