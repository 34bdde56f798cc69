"""
Band State - closed elastic band as a chain of capsules
Construction from (ID, CSD, twist, stretch) and the exact geometric oracles
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from src.config import settings
from src.core.exceptions import ParameterRangeError

logger = logging.getLogger(__name__)

_RANGE_TOL = 1e-9


@dataclass
class BandState:
    """
    Closed elastic band

    Segment i joins node i to node (i + 1) mod P.

    Attributes:
        nodes: (P, 3) centerline positions in meters
        velocities: (P, 3) node velocities in m/s
        csd: Cross-sectional diameter in meters
        rest_length: (P,) rest length of each segment
        bend_rest_length: (P,) rest length between node i and node i + 2
        twist_tag: Net twist count
        d_id: Inside diameter of the relaxed band
        stretch: Stretch factor the band was created with
    """
    nodes: np.ndarray
    velocities: np.ndarray
    csd: float
    rest_length: np.ndarray
    bend_rest_length: np.ndarray
    twist_tag: int = 0
    d_id: float = 0.10
    stretch: float = 1.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def radius(self) -> float:
        """Tube radius"""
        return 0.5 * self.csd

    def copy(self) -> "BandState":
        return replace(self, nodes=self.nodes.copy(), velocities=self.velocities.copy())

    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Start and end points of every segment"""
        return self.nodes, np.roll(self.nodes, -1, axis=0)

    def segment_lengths(self) -> np.ndarray:
        a, b = self.segments()
        return np.linalg.norm(b - a, axis=1)

    def total_length(self) -> float:
        return float(self.segment_lengths().sum())

    def rest_total_length(self) -> float:
        return float(self.rest_length.sum())

    def bounding_sphere(self) -> Tuple[np.ndarray, float]:
        center = self.nodes.mean(axis=0)
        radius = float(np.max(np.linalg.norm(self.nodes - center, axis=1))) + self.radius
        return center, radius

    def bounding_box(self, margin: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        pad = self.radius + margin
        return self.nodes.min(axis=0) - pad, self.nodes.max(axis=0) + pad


def _check_range(name: str, value: float, low: float, high: float):
    if not (low - _RANGE_TOL <= value <= high + _RANGE_TOL):
        raise ParameterRangeError(f"{name}={value} outside [{low}, {high}]")


def _ellipse_semi_axis(radius: float, stretch: float) -> float:
    """Semi-major axis A of an ellipse with semi-minor axis `radius` whose perimeter is stretch * 2*pi*radius"""
    target = stretch * 2.0 * np.pi * radius
    t = np.linspace(0.0, 2.0 * np.pi, 4097)

    def perimeter(a):
        pts = np.stack([a * np.cos(t), radius * np.sin(t)], axis=1)
        return np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()

    low, high = radius, 4.0 * stretch * radius
    if perimeter(low) >= target:
        return radius
    for _ in range(80):
        mid = 0.5 * (low + high)
        if perimeter(mid) < target:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def _resample_closed(points: np.ndarray, n: int, phase: float = 0.0) -> np.ndarray:
    """Uniform arclength resampling of a closed polyline, starting `phase` spacings after point 0"""
    closed = np.vstack([points, points[:1]])
    lengths = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(lengths)])
    total = s[-1]
    targets = (np.arange(n) + phase) * total / n
    return np.stack([np.interp(targets, s, closed[:, k]) for k in range(3)], axis=1)


def init_band(d_id: float, d_csd: float, twist: int = 0, stretch: float = 1.0,
              seed: int = 0, n_nodes: int = settings.BAND_NODES,
              center: Optional[np.ndarray] = None) -> BandState:
    """
    Build a band at rest velocity realizing the requested twist and stretch

    The relaxed band is a circle whose tube axis has radius (ID + CSD)/2, so
    its inner edge has circumference pi * ID. Stretch elongates it into an
    ellipse of the requested perimeter. A twist of n turns the far half of
    the loop about the long axis by n * pi, which crosses the two strands
    |n| times in projection; the strands pass each other one CSD apart.

    Args:
        d_id: Inside diameter (m)
        d_csd: Cross-sectional diameter (m)
        twist: Net twist count, |twist| <= MAX_TWIST
        stretch: Perimeter ratio to the relaxed band, in [1, 2]
        seed: Seeds the in-plane yaw of the configuration
        n_nodes: Number of centerline nodes P
        center: Loop center; origin by default

    Returns:
        BandState with zero velocities
    """
    _check_range("d_id", d_id, *settings.INSIDE_DIAMETER_RANGE)
    _check_range("d_csd", d_csd, *settings.CROSS_SECTION_RANGE)
    _check_range("stretch", stretch, *settings.STRETCH_RANGE)
    if int(twist) != twist or abs(twist) > settings.MAX_TWIST:
        raise ParameterRangeError(f"twist={twist} outside [-{settings.MAX_TWIST}, {settings.MAX_TWIST}]")
    if n_nodes < 8 or n_nodes % 4:
        raise ParameterRangeError(f"n_nodes={n_nodes} must be a multiple of 4 and at least 8")

    rng = np.random.default_rng(seed)
    radius = 0.5 * (d_id + d_csd)
    rest_chord = 2.0 * radius * np.sin(np.pi / n_nodes)
    bend_chord = 2.0 * radius * np.sin(2.0 * np.pi / n_nodes)

    semi_major = _ellipse_semi_axis(radius, stretch)
    t = np.linspace(0.0, 2.0 * np.pi, 8 * n_nodes, endpoint=False)
    dense = np.stack([semi_major * np.cos(t), radius * np.sin(t), np.zeros_like(t)], axis=1)
    # half-spacing phase keeps strand crossings away from nodes
    nodes = _resample_closed(dense, n_nodes, phase=0.5)
    if stretch == 1.0:
        angles = (np.arange(n_nodes) + 0.5) * 2.0 * np.pi / n_nodes
        nodes = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n_nodes)], axis=1)

    if twist:
        theta = twist * np.pi * (nodes[:, 0] + semi_major) / (2.0 * semi_major)
        lift = d_csd / radius
        y = nodes[:, 1].copy()
        nodes[:, 1] = y * np.cos(theta)
        nodes[:, 2] = lift * y * np.sin(theta)
        target = stretch * n_nodes * rest_chord
        length = np.linalg.norm(np.roll(nodes, -1, axis=0) - nodes, axis=1).sum()
        nodes *= target / length

    yaw = rng.uniform(0.0, 2.0 * np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    nodes = nodes @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    if center is not None:
        nodes = nodes + np.asarray(center, dtype=np.float64)

    state = BandState(
        nodes=nodes,
        velocities=np.zeros_like(nodes),
        csd=float(d_csd),
        rest_length=np.full(n_nodes, rest_chord),
        bend_rest_length=np.full(n_nodes, bend_chord),
        twist_tag=int(twist),
        d_id=float(d_id),
        stretch=float(stretch),
    )
    logger.debug(f"Band initialized: ID={d_id} CSD={d_csd} twist={twist} stretch={stretch} P={n_nodes}")
    return state


def projected_crossings(nodes: np.ndarray) -> int:
    """Number of self-crossings of the closed centerline projected on the xy plane"""
    a = nodes[:, :2]
    b = np.roll(a, -1, axis=0)
    n = len(a)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    d1 = orient(a[i], b[i], a[j])
    d2 = orient(a[i], b[i], b[j])
    d3 = orient(a[j], b[j], a[i])
    d4 = orient(a[j], b[j], b[i])
    return int(np.count_nonzero((d1 * d2 < 0) & (d3 * d4 < 0)))


def _closest_on_segments(state: BandState, points: np.ndarray, chunk: int = 2048):
    """Distance to the nearest segment axis and the closest axis point"""
    a, b = state.segments()
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    distances = np.empty(len(points))
    closest = np.empty_like(points)
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nij,ij->ni", ap, ab) / denom, 0.0, 1.0)
        foot = a[None, :, :] + t[..., None] * ab[None, :, :]
        d2 = np.sum((p[:, None, :] - foot) ** 2, axis=2)
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        distances[start:start + chunk] = np.sqrt(d2[rows, best])
        closest[start:start + chunk] = foot[rows, best]
    return distances, closest


def true_sdf(state: BandState, x: np.ndarray) -> np.ndarray:
    """
    Signed distance to the capsule-chain surface, negative inside

    Args:
        state: Band
        x: (N, 3) points or a single 3-vector

    Returns:
        (N,) distances in meters, or a float for a single point
    """
    x = np.asarray(x, dtype=np.float64)
    points = x.reshape(-1, 3)
    distances, _ = _closest_on_segments(state, points)
    sdf = distances - state.radius
    return float(sdf[0]) if x.ndim == 1 else sdf


def true_sdf_gradient(state: BandState, x: np.ndarray) -> np.ndarray:
    """Unit outward direction from the nearest axis point (the SDF gradient off the medial axis)"""
    points = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    distances, closest = _closest_on_segments(state, points)
    return (points - closest) / np.maximum(distances, 1e-300)[:, None]


def surface_sample(state: BandState, n: int, rng: np.random.Generator,
                   tolerance: float = 1e-9,
                   max_rounds: int = settings.SURFACE_SAMPLE_MAX_ROUNDS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Uniform points on the band surface with outward unit normals

    Candidates are drawn on each segment's cylinder in proportion to segment
    length; candidates swallowed by a neighbouring capsule are rejected.

    Args:
        state: Band
        n: Number of samples
        rng: Random generator
        max_rounds: Rejection rounds before giving up

    Returns:
        (points (n, 3), normals (n, 3))

    Raises:
        ParameterRangeError: zero-length band, or too few surface points survive
    """
    if n < 1:
        raise ParameterRangeError(f"surface_sample needs n >= 1, got {n}")
    a, b = state.segments()
    ab = b - a
    lengths = np.linalg.norm(ab, axis=1)
    if not np.all(np.isfinite(lengths)) or lengths.sum() <= 0.0:
        raise ParameterRangeError("surface_sample needs a band with finite, non-zero length")
    axis = ab / np.maximum(lengths, 1e-300)[:, None]
    helper = np.where(np.abs(axis[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    u = np.cross(axis, helper)
    u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
    v = np.cross(axis, u)
    weights = lengths / lengths.sum()

    points, normals = [], []
    have = 0
    for _ in range(max_rounds):
        if have >= n:
            break
        m = max(2 * (n - have), 64)
        seg = rng.choice(len(a), size=m, p=weights)
        t = rng.uniform(0.0, 1.0, m)
        phi = rng.uniform(0.0, 2.0 * np.pi, m)
        normal = np.cos(phi)[:, None] * u[seg] + np.sin(phi)[:, None] * v[seg]
        candidate = a[seg] + t[:, None] * ab[seg] + state.radius * normal
        ok = np.abs(true_sdf(state, candidate)) <= tolerance
        points.append(candidate[ok])
        normals.append(normal[ok])
        have += int(ok.sum())
    if have < n:
        raise ParameterRangeError(f"surface_sample kept {have} of {n} points after {max_rounds} rounds")
    return np.concatenate(points)[:n], np.concatenate(normals)[:n]


def medial_axis_sample(state: BandState, n: int = settings.MEDIAL_AXIS_POINTS) -> np.ndarray:
    """n centerline points equally spaced by arclength, starting at node 0"""
    if n < 1:
        raise ParameterRangeError(f"medial_axis_sample needs n >= 1, got {n}")
    return _resample_closed(state.nodes, n)
