"""
Point-set distances: Chamfer and earth mover's distance
"""

import logging
from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from src.config import settings
from src.core.exceptions import ParameterRangeError

logger = logging.getLogger(__name__)


def _as_cloud(points: np.ndarray, name: str) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) == 0:
        raise ParameterRangeError(f"{name} must be a non-empty (N, 3) array, got {points.shape}")
    return points


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """
    Symmetric non-squared Chamfer distance

    Args:
        a: (N, 3) points
        b: (M, 3) points

    Returns:
        0.5 * (mean over a of nearest distance in b + mean over b of nearest distance in a)
    """
    a, b = _as_cloud(a, "a"), _as_cloud(b, "b")
    a_to_b, _ = cKDTree(b).query(a)
    b_to_a, _ = cKDTree(a).query(b)
    return float(0.5 * (np.mean(a_to_b) + np.mean(b_to_a)))


def _sinkhorn(cost: np.ndarray, epsilon: float, iterations: int) -> float:
    n = len(cost)
    log_mass = np.full(n, -np.log(n))
    f, g = np.zeros(n), np.zeros(n)
    for _ in range(iterations):
        f = -epsilon * logsumexp((g[None, :] - cost) / epsilon + log_mass[None, :], axis=1)
        g = -epsilon * logsumexp((f[:, None] - cost) / epsilon + log_mass[:, None], axis=0)
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon + log_mass[:, None] + log_mass[None, :])
    return float(np.sum(plan * cost))


def emd_with_solver(a: np.ndarray, b: np.ndarray,
                    exact_max_points: int = settings.EMD_EXACT_MAX_POINTS,
                    eps_ratio: float = settings.SINKHORN_EPS_RATIO,
                    iterations: int = settings.SINKHORN_ITERATIONS) -> Tuple[float, str]:
    """
    Mean matching cost of the best perfect matching

    Returns:
        (distance, solver) with solver 'hungarian' or 'sinkhorn'
    """
    a, b = _as_cloud(a, "a"), _as_cloud(b, "b")
    if len(a) != len(b):
        raise ParameterRangeError(f"emd needs equal sizes, got {len(a)} and {len(b)}")
    cost = cdist(a, b)
    if len(a) <= exact_max_points:
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean()), "hungarian"
    scale = float(cost.max())
    if scale == 0.0:
        return 0.0, "sinkhorn"
    logger.warning(f"EMD on {len(a)} points exceeds the exact limit {exact_max_points}; using Sinkhorn")
    return _sinkhorn(cost, eps_ratio * scale, iterations), "sinkhorn"


def emd(a: np.ndarray, b: np.ndarray) -> float:
    return emd_with_solver(a, b)[0]
