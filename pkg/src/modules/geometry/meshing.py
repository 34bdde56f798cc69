"""
Iso-surface extraction of signed distance fields and mesh export
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
from skimage import measure

from src.config import settings
from src.core.exceptions import ParameterRangeError

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned sampling grid"""
    lower: Tuple[float, float, float]
    upper: Tuple[float, float, float]
    resolution: int = settings.MC_RESOLUTION

    def __post_init__(self):
        if self.resolution < 2:
            raise ParameterRangeError(f"grid resolution must be >= 2, got {self.resolution}")

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / (self.resolution - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def points(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, self.resolution) for lo, hi in zip(self.lower, self.upper)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)

    @classmethod
    def around(cls, lower: np.ndarray, upper: np.ndarray, resolution: int = settings.MC_RESOLUTION,
               margin: float = 0.0) -> "GridSpec":
        return cls(tuple(np.asarray(lower) - margin), tuple(np.asarray(upper) + margin), resolution)


@dataclass
class Mesh:
    """Triangle mesh"""
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def edge_use_counts(self) -> dict:
        """Number of triangles sharing each undirected edge"""
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        unique, counts = np.unique(edges, axis=0, return_counts=True)
        return {tuple(e): int(c) for e, c in zip(unique, counts)}

    def is_watertight(self) -> bool:
        return not self.is_empty and all(c == 2 for c in self.edge_use_counts().values())

    def sample_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted uniform samples on the surface"""
        if self.is_empty:
            raise ParameterRangeError("cannot sample an empty mesh")
        areas = self.triangle_areas()
        tri = rng.choice(len(self.faces), size=n, p=areas / areas.sum())
        r1, r2 = rng.uniform(size=(2, n))
        s = np.sqrt(r1)
        v = self.vertices[self.faces[tri]]
        return ((1 - s)[:, None] * v[:, 0] + (s * (1 - r2))[:, None] * v[:, 1]
                + (s * r2)[:, None] * v[:, 2])

    def save_obj(self, path: Union[str, Path], header: Optional[str] = None):
        """Plain-text export: 'v x y z' and 1-based 'f i j k' lines"""
        with open(path, "w") as f:
            if header:
                for line in header.splitlines():
                    f.write(f"# {line}\n")
            for x, y, z in self.vertices:
                f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
            for i, j, k in self.faces + 1:
                f.write(f"f {i} {j} {k}\n")
        logger.info(f"Mesh written to {path} ({len(self.vertices)} vertices, {len(self.faces)} faces)")


def sample_field(field_fn: Field, grid: GridSpec, chunk: int = 65536) -> np.ndarray:
    """Evaluate a field on the grid, returning a (R, R, R) volume"""
    points = grid.points()
    values = np.concatenate([np.asarray(field_fn(points[i:i + chunk])).reshape(-1)
                             for i in range(0, len(points), chunk)])
    return values.reshape((grid.resolution,) * 3)


def marching_cubes(field_fn: Field, grid: GridSpec, level: float = 0.0) -> Mesh:
    """
    Zero level set of a field by marching cubes with linear edge interpolation

    Args:
        field_fn: Maps (N, 3) points to (N,) values
        grid: Sampling grid
        level: Iso value

    Returns:
        Mesh in world coordinates; empty if the grid has no crossing
    """
    volume = sample_field(field_fn, grid)
    if not (volume.min() < level < volume.max()):
        logger.warning("No zero crossing in the sampling grid; returning an empty mesh")
        return Mesh()
    vertices, faces, _, _ = measure.marching_cubes(volume, level=level, spacing=tuple(grid.spacing),
                                                   allow_degenerate=False, method="lewiner")
    mesh = Mesh(vertices + np.asarray(grid.lower), faces.astype(np.int64))
    degenerate = mesh.triangle_areas() <= 1e-12
    if np.any(degenerate):
        mesh.faces = mesh.faces[~degenerate]
    logger.debug(f"Marching cubes: {len(mesh.vertices)} vertices, {len(mesh.faces)} faces")
    return mesh


def reproject_vertices(mesh: Mesh, field_fn: Field, gradient_fn: Field) -> Mesh:
    """One Newton step moving each vertex onto the zero level set along the gradient"""
    if mesh.is_empty:
        return mesh
    values = np.asarray(field_fn(mesh.vertices)).reshape(-1)
    grads = np.asarray(gradient_fn(mesh.vertices)).reshape(-1, 3)
    step = values / np.maximum(np.sum(grads * grads, axis=1), 1e-12)
    return Mesh(mesh.vertices - step[:, None] * grads, mesh.faces.copy())


def surface_cloud(field_fn: Field, grid: GridSpec, n: int,
                  rng: np.random.Generator) -> Optional[np.ndarray]:
    """
    n area-weighted samples of a field's zero level set

    Returns:
        (n, 3) points, or None when the grid holds no surface
    """
    mesh = marching_cubes(field_fn, grid)
    if mesh.is_empty:
        return None
    return mesh.sample_points(n, rng)
