"""
Farthest point sampling
"""

import numpy as np

from src.core.exceptions import ParameterRangeError


def fps_indices(points: np.ndarray, n: int) -> np.ndarray:
    """
    Greedy farthest-point order, seeded by the point nearest the centroid

    Args:
        points: (N, 3) cloud
        n: Number of indices to return, n <= N

    Returns:
        (n,) indices into points
    """
    points = np.asarray(points, dtype=np.float64)
    if n < 1 or n > len(points):
        raise ParameterRangeError(f"fps needs 1 <= n <= {len(points)}, got {n}")
    first = int(np.argmin(np.linalg.norm(points - points.mean(axis=0), axis=1)))
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    nearest = np.linalg.norm(points - points[first], axis=1)
    for k in range(1, n):
        chosen[k] = int(np.argmax(nearest))
        nearest = np.minimum(nearest, np.linalg.norm(points - points[chosen[k]], axis=1))
    return chosen


def fps(points: np.ndarray, n: int) -> np.ndarray:
    """Farthest-point subset of exactly n points"""
    return np.asarray(points, dtype=np.float64)[fps_indices(points, n)]
