"""
Band Simulator - semi-implicit Euler on a closed mass-spring chain
Stretch and bending springs, damping, gravity, penalty contact and a kinematic gripper
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from src.config import settings
from src.core.exceptions import ParameterRangeError, SimulationDivergedError
from .band_state import BandState
from .obstacles import Obstacle

logger = logging.getLogger(__name__)

ACTION_DIM = settings.ACTION_DIM


@dataclass(frozen=True)
class SimConfig:
    """Physical constants of the simulator"""
    dt: float = settings.SIM_DT
    substeps: int = settings.SIM_SUBSTEPS
    stretch_stiffness: float = settings.STRETCH_STIFFNESS
    bending_stiffness: float = settings.BENDING_STIFFNESS
    damping: float = settings.DAMPING
    gravity: Tuple[float, float, float] = settings.GRAVITY
    node_mass: float = settings.NODE_MASS
    grasp_radius: float = settings.GRASP_RADIUS
    contact_stiffness: float = settings.CONTACT_STIFFNESS
    max_linear_speed: float = settings.MAX_LINEAR_SPEED
    max_angular_speed: float = settings.MAX_ANGULAR_SPEED

    def __post_init__(self):
        if self.dt <= 0 or self.substeps < 1:
            raise ParameterRangeError(f"dt must be > 0 and substeps >= 1 (dt={self.dt}, substeps={self.substeps})")
        for name in ("stretch_stiffness", "bending_stiffness", "contact_stiffness", "damping"):
            if getattr(self, name) < 0:
                raise ParameterRangeError(f"{name} must be >= 0")
        if self.node_mass <= 0:
            raise ParameterRangeError("node_mass must be > 0")

    def without_gravity(self) -> "SimConfig":
        return replace(self, gravity=(0.0, 0.0, 0.0))


@dataclass
class Gripper:
    """
    End effector

    Attributes:
        position: (3,) meters
        orientation: (4,) unit quaternion, scalar last
        linear_velocity: (3,) m/s of the last step
        angular_velocity: (3,) rad/s of the last step
        closed: Gripper state
        attached: Index of the held node, or None
        grasp_offset: Held node position in the gripper frame
    """
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.2]))
    orientation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    closed: bool = False
    attached: Optional[int] = None
    grasp_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def rotation(self) -> Rotation:
        return Rotation.from_quat(self.orientation)

    def held_point(self) -> np.ndarray:
        return self.position + self.rotation().apply(self.grasp_offset)

    def copy(self) -> "Gripper":
        return replace(self, position=self.position.copy(), orientation=self.orientation.copy(),
                       linear_velocity=self.linear_velocity.copy(),
                       angular_velocity=self.angular_velocity.copy(),
                       grasp_offset=self.grasp_offset.copy())

    def proprioception(self) -> np.ndarray:
        """[position(3), quaternion(4), linear velocity(3), angular velocity(3), gripper(1)]"""
        return np.concatenate([self.position, self.orientation, self.linear_velocity,
                               self.angular_velocity, [1.0 if self.closed else 0.0]])


@dataclass
class Scene:
    """Obstacles and the gripper"""
    obstacles: List[Obstacle] = field(default_factory=list)
    gripper: Gripper = field(default_factory=Gripper)

    def copy(self) -> "Scene":
        return Scene(list(self.obstacles), self.gripper.copy())


def _spring_forces(x: np.ndarray, rest: np.ndarray, stiffness: float, hop: int) -> np.ndarray:
    if stiffness == 0.0:
        return np.zeros_like(x)
    d = np.roll(x, -hop, axis=0) - x
    length = np.linalg.norm(d, axis=1)
    pull = (stiffness * (length - rest) / np.maximum(length, 1e-12))[:, None] * d
    return pull - np.roll(pull, hop, axis=0)


def _contact_forces(x: np.ndarray, obstacles: List[Obstacle], radius: float, stiffness: float) -> np.ndarray:
    forces = np.zeros_like(x)
    if stiffness == 0.0:
        return forces
    for obstacle in obstacles:
        depth = radius - obstacle.distance(x)
        touching = depth > 0.0
        if np.any(touching):
            forces[touching] += stiffness * depth[touching, None] * obstacle.normal(x[touching])
    return forces


def _update_grasp(state: BandState, gripper: Gripper, close: bool, config: SimConfig):
    if not close:
        gripper.closed = False
        gripper.attached = None
        return
    if gripper.closed and gripper.attached is not None:
        return
    gripper.closed = True
    distances = np.linalg.norm(state.nodes - gripper.position, axis=1)
    nearest = int(np.argmin(distances))
    if distances[nearest] <= config.grasp_radius:
        gripper.attached = nearest
        gripper.grasp_offset = gripper.rotation().inv().apply(state.nodes[nearest] - gripper.position)
        logger.debug(f"Gripper attached to node {nearest}")


def step(state: BandState, scene: Scene, action: np.ndarray,
         config: SimConfig = SimConfig()) -> Tuple[BandState, Scene]:
    """
    Advance the band and gripper by one environment step

    Args:
        state: Band state (not modified)
        scene: Obstacles and gripper (not modified)
        action: (a_lin(3), a_ang(3), a_gripper) with a_lin, a_ang in [-1, 1]
        config: Physical constants

    Returns:
        (new state, new scene)
    """
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ParameterRangeError(f"action must have {ACTION_DIM} components, got {action.shape}")
    if not np.all(np.isfinite(action)):
        raise SimulationDivergedError("non-finite action")

    state = state.copy()
    scene = scene.copy()
    gripper = scene.gripper
    lin = np.clip(action[:3], -1.0, 1.0) * config.max_linear_speed
    ang = np.clip(action[3:6], -1.0, 1.0) * config.max_angular_speed
    _update_grasp(state, gripper, bool(action[6] >= 0.5), config)
    gripper.linear_velocity = lin
    gripper.angular_velocity = ang

    h = config.dt / config.substeps
    decay = np.exp(-config.damping * h)
    gravity = np.asarray(config.gravity, dtype=np.float64)
    x, v = state.nodes, state.velocities
    spin = Rotation.from_rotvec(ang * h)

    for _ in range(config.substeps):
        gripper.position = gripper.position + lin * h
        gripper.orientation = (spin * gripper.rotation()).as_quat()

        forces = _spring_forces(x, state.rest_length, config.stretch_stiffness, 1)
        forces += _spring_forces(x, state.bend_rest_length, config.bending_stiffness, 2)
        forces += _contact_forces(x, scene.obstacles, state.radius, config.contact_stiffness)
        v = (v + h * (forces / config.node_mass + gravity)) * decay
        x = x + h * v

        if gripper.attached is not None:
            i = gripper.attached
            lever = gripper.rotation().apply(gripper.grasp_offset)
            x[i] = gripper.position + lever
            v[i] = lin + np.cross(ang, lever)

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise SimulationDivergedError("non-finite band state after step")
    state.nodes, state.velocities = x, v
    return state, scene
