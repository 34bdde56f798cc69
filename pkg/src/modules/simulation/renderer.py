"""
Point Cloud Renderer - partial views by hidden-point removal
Dense oracle surface samples are filtered for visibility from a viewpoint and
reduced to a fixed size by farthest point sampling
"""

import logging
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from src.config import settings
from src.core.exceptions import DegenerateViewpointError
from src.modules.geometry.sampling import fps, fps_indices
from .band_state import BandState, surface_sample

logger = logging.getLogger(__name__)


def hidden_point_removal(points: np.ndarray, viewpoint: np.ndarray,
                         radius_factor: float = settings.HPR_RADIUS_FACTOR) -> np.ndarray:
    """
    Indices of points visible from the viewpoint (spherical flip + convex hull)

    Args:
        points: (N, 3) surface samples
        viewpoint: (3,) camera position
        radius_factor: Flip radius as a multiple of the farthest point distance

    Returns:
        Sorted indices of visible points
    """
    p = np.asarray(points, dtype=np.float64) - np.asarray(viewpoint, dtype=np.float64)
    norms = np.linalg.norm(p, axis=1)
    flip_radius = radius_factor * norms.max()
    flipped = p + 2.0 * (flip_radius - norms)[:, None] * p / norms[:, None]
    hull = ConvexHull(np.vstack([flipped, np.zeros((1, 3))]))
    visible = hull.vertices[hull.vertices < len(p)]
    return np.sort(visible)


def sample_viewpoint(state: BandState, rng: np.random.Generator,
                     distance_range=settings.VIEW_DISTANCE_RANGE,
                     min_elevation: float = settings.VIEW_MIN_ELEVATION) -> np.ndarray:
    """Random camera position on the upper hemisphere shell around the band"""
    center, radius = state.bounding_sphere()
    distance = rng.uniform(*distance_range) * radius
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = rng.uniform(min_elevation, 0.5 * np.pi - 0.05)
    direction = np.array([np.cos(elevation) * np.cos(azimuth),
                          np.cos(elevation) * np.sin(azimuth),
                          np.sin(elevation)])
    return center + distance * direction


def render_partial(state: BandState, viewpoint: np.ndarray, rng: np.random.Generator,
                   n: int = settings.CLOUD_POINTS,
                   dense: int = settings.DENSE_SURFACE_SAMPLES,
                   return_normals: bool = False):
    """
    Partial point cloud of the band as seen from a viewpoint

    Args:
        state: Band
        viewpoint: Camera position outside the bounding sphere
        rng: Random generator for the oracle surface samples
        n: Output size
        dense: Number of oracle samples before visibility filtering
        return_normals: Also return the surface normals of the kept points

    Returns:
        (n, 3) points, plus (n, 3) normals when requested
    """
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    center, radius = state.bounding_sphere()
    if np.linalg.norm(viewpoint - center) <= radius:
        raise DegenerateViewpointError("viewpoint lies inside the band's bounding sphere")
    points, normals = surface_sample(state, dense, rng)
    visible = hidden_point_removal(points, viewpoint)
    if len(visible) < n:
        raise DegenerateViewpointError(f"only {len(visible)} visible points, {n} requested")
    points, normals = points[visible], normals[visible]
    keep = fps_indices(points, n)
    if return_normals:
        return points[keep], normals[keep]
    return points[keep]


def render_complete(state: BandState, rng: np.random.Generator,
                    n: int = settings.CLOUD_POINTS,
                    dense: Optional[int] = None) -> np.ndarray:
    """Occlusion-free cloud of n points over the whole surface"""
    points, _ = surface_sample(state, dense or 4 * n, rng)
    return fps(points, n)
