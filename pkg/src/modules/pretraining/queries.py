"""
SDF Query Sampling - on-surface, near-surface, off-surface and medial-axis sets
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.config import settings
from src.core.exceptions import ParameterRangeError
from src.modules.simulation import BandState, medial_axis_sample, surface_sample, true_sdf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QueryCounts:
    on: int = settings.QUERY_ON_SURFACE
    near: int = settings.QUERY_NEAR_SURFACE
    off: int = settings.QUERY_OFF_SURFACE
    medial: int = settings.MEDIAL_AXIS_POINTS

    def validate(self):
        for name in ("on", "near", "off", "medial"):
            if getattr(self, name) < 1:
                raise ParameterRangeError(f"query count '{name}' must be positive")


@dataclass
class SdfBatch:
    """
    Supervision for one band configuration

    Attributes:
        on_points: (N_on, 3) surface points
        on_normals: (N_on, 3) outward unit normals
        near_points: (N_near, 3) jittered surface points
        near_distances: (N_near,) oracle signed distances
        off_points: (N_off, 3) uniform points in the scene box
        off_distances: (N_off,) oracle signed distances
        medial: (N_medial, 3) centerline points
        record_id: Source record
    """
    on_points: np.ndarray
    on_normals: np.ndarray
    near_points: np.ndarray
    near_distances: np.ndarray
    off_points: np.ndarray
    off_distances: np.ndarray
    medial: np.ndarray
    record_id: Optional[str] = None

    @property
    def all_points(self) -> np.ndarray:
        """Q in the order on, near, off"""
        return np.vstack([self.on_points, self.near_points, self.off_points])

    @property
    def counts(self) -> QueryCounts:
        return QueryCounts(len(self.on_points), len(self.near_points), len(self.off_points),
                           len(self.medial))

    def subsample(self, counts: QueryCounts, rng: np.random.Generator) -> "SdfBatch":
        """Random subset of each block, used for cheaper training steps"""
        def pick(n_have, n_want):
            return rng.choice(n_have, size=min(n_have, n_want), replace=False)
        on = pick(len(self.on_points), counts.on)
        near = pick(len(self.near_points), counts.near)
        off = pick(len(self.off_points), counts.off)
        medial = pick(len(self.medial), counts.medial)
        return SdfBatch(self.on_points[on], self.on_normals[on],
                        self.near_points[near], self.near_distances[near],
                        self.off_points[off], self.off_distances[off],
                        self.medial[medial], self.record_id)


def sample_queries(state: BandState, counts: QueryCounts, rng: np.random.Generator,
                   near_sigma: float = settings.NEAR_SURFACE_SIGMA,
                   margin: float = settings.SCENE_MARGIN,
                   record_id: Optional[str] = None) -> SdfBatch:
    """
    Draw the query sets for one band

    Args:
        state: Band
        counts: Block sizes
        rng: Random generator
        near_sigma: Gaussian jitter of near-surface points in multiples of d_CSD
        margin: Padding of the off-surface box around the band (m)
        record_id: Label carried by the batch

    Returns:
        SdfBatch
    """
    counts.validate()
    on_points, on_normals = surface_sample(state, counts.on, rng)

    anchors, _ = surface_sample(state, counts.near, rng)
    near_points = anchors + rng.normal(0.0, near_sigma * state.csd, anchors.shape)
    near_distances = true_sdf(state, near_points)

    lower, upper = state.bounding_box(margin)
    off_points = rng.uniform(lower, upper, (counts.off, 3))
    off_distances = true_sdf(state, off_points)

    medial = medial_axis_sample(state, counts.medial)
    return SdfBatch(on_points, on_normals, near_points, near_distances,
                    off_points, off_distances, medial, record_id)
