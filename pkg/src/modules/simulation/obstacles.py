"""
Static obstacles as signed distance functions
Contact uses the obstacle distance and its numerical gradient
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

_FD_STEP = 1e-6


class Obstacle:
    """Base class: subclasses implement distance(points) -> (N,) signed distances"""

    def distance(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, points: np.ndarray) -> np.ndarray:
        """Outward unit normals from central differences of the distance"""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        grad = np.zeros_like(points)
        for k in range(3):
            step = np.zeros(3)
            step[k] = _FD_STEP
            grad[:, k] = (self.distance(points + step) - self.distance(points - step)) / (2 * _FD_STEP)
        return grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-12)

    def to_dict(self) -> dict:
        return {"type": type(self).__name__,
                **{k: np.asarray(v).tolist() for k, v in vars(self).items()}}


@dataclass
class Plane(Obstacle):
    """Half-space below the plane through `point` with upward `normal_vector`"""
    point: np.ndarray
    normal_vector: np.ndarray

    def distance(self, points):
        n = np.asarray(self.normal_vector, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return (np.asarray(points).reshape(-1, 3) - self.point) @ n


@dataclass
class Capsule(Obstacle):
    """Segment a-b swept by a sphere of `radius` (poles)"""
    a: np.ndarray
    b: np.ndarray
    radius: float

    def distance(self, points):
        p = np.asarray(points).reshape(-1, 3)
        a, b = np.asarray(self.a, float), np.asarray(self.b, float)
        ab = b - a
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - (a + t[:, None] * ab), axis=1) - self.radius


def _box2d(q: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    d = np.abs(q - center) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(np.max(d, axis=1), 0.0)
    return outside + inside


@dataclass
class Cylinder(Obstacle):
    """Capped cylinder about a vertical axis through `base` (bottom center)"""
    base: np.ndarray
    radius: float
    height: float

    def _radial_axial(self, points):
        p = np.asarray(points).reshape(-1, 3) - np.asarray(self.base, float)
        return np.stack([np.linalg.norm(p[:, :2], axis=1), p[:, 2]], axis=1)

    def distance(self, points):
        q = self._radial_axial(points)
        return _box2d(q, np.array([0.0, 0.5 * self.height]), np.array([self.radius, 0.5 * self.height]))


@dataclass
class GroovedCylinder(Cylinder):
    """Cylinder with a circumferential groove of `groove_depth` x `groove_width` centered at `groove_height`"""
    groove_height: float = 0.0
    groove_depth: float = 0.0
    groove_width: float = 0.0

    def distance(self, points):
        q = self._radial_axial(points)
        body = super().distance(points)
        far = self.radius + 1.0
        inner = self.radius - self.groove_depth
        groove = _box2d(q, np.array([0.5 * (inner + far), self.groove_height]),
                        np.array([0.5 * (far - inner), 0.5 * self.groove_width]))
        return np.maximum(body, -groove)

    @property
    def groove_radius(self) -> float:
        """Radius of the groove floor"""
        return self.radius - self.groove_depth
