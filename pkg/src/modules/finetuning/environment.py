"""
Band Manipulation Environment - task presets, action masks, reward and observations
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.config import DatasetConfig, SacConfig, TaskConfig, settings
from src.core.exceptions import DegenerateViewpointError, ParameterRangeError
from src.modules.geometry import chamfer
from src.modules.simulation import (BandState, Capsule, Gripper, GroovedCylinder, Obstacle,
                                    Plane, Scene, SimConfig, init_band, render_complete,
                                    render_partial, sample_viewpoint)
from src.modules.simulation import step as sim_step

logger = logging.getLogger(__name__)

MAX_VIEW_ATTEMPTS = 10
POLE_RADIUS = 0.005
POLE_HEIGHT = 0.15


@dataclass(frozen=True)
class TaskPreset:
    """
    Attributes:
        name: Preset key
        gravity: Whether gravity acts on the band
        mask: Per-component action multiplier (a_lin xyz, a_ang xyz, gripper)
    """
    name: str
    gravity: bool
    mask: Tuple[float, ...]

    @property
    def dof(self) -> int:
        return int(sum(self.mask))


PRESETS = {
    "stretch-place": TaskPreset("stretch-place", False, (1, 1, 1, 0, 0, 0, 1)),
    "untwist": TaskPreset("untwist", True, (1, 1, 1, 0, 0, 1, 1)),
    "install": TaskPreset("install", False, (1, 0, 1, 0, 1, 0, 1)),
}


def get_preset(name: str) -> TaskPreset:
    if name not in PRESETS:
        raise ParameterRangeError(f"unknown task preset '{name}'")
    return PRESETS[name]


def reward(p_t: np.ndarray, p_des: np.ndarray, delta: float = settings.SUCCESS_DELTA,
           reward_alpha: float = settings.REWARD_ALPHA) -> float:
    """Sparse success bonus when CD <= delta, minus reward_alpha times CD"""
    return reward_from_cd(chamfer(p_t, p_des), delta, reward_alpha)


def reward_from_cd(cd: float, delta: float, reward_alpha: float) -> float:
    bonus = settings.SUCCESS_BONUS if cd <= delta else 0.0
    return bonus - reward_alpha * cd


def reference_action(gripper: Gripper, target: np.ndarray, sim: SimConfig) -> np.ndarray:
    """Closed gripper moving toward `target` at up to full linear speed"""
    action = np.zeros(settings.ACTION_DIM)
    action[:3] = np.clip((target - gripper.position) / (sim.max_linear_speed * sim.dt), -1.0, 1.0)
    action[6] = 1.0
    return action


@dataclass
class Observation:
    proprio: np.ndarray     # (14,)
    cloud: np.ndarray       # (N, 3) partial view


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    success: bool
    cd: float


@dataclass
class TaskLayout:
    """
    Initial band, goal band and scene of one episode

    `target` is the gripper position of the reference motion when the goal
    was produced by simulating it.
    """
    band: BandState
    goal: BandState
    obstacles: List[Obstacle]
    grasp_node: int
    target: Optional[np.ndarray] = None


class BandEnv:
    """
    One band, one gripper, one goal

    The band class (ID, CSD) is drawn from the dataset grid at every reset.
    Observations are partial clouds from a camera fixed for the episode;
    the reward compares the full-surface cloud with the goal cloud.
    """

    def __init__(self, task: TaskConfig, sac: SacConfig, data: DatasetConfig,
                 seed: int = 0, sim: Optional[SimConfig] = None):
        self.preset = get_preset(task.preset)
        self.task = task
        self.delta = sac.delta
        self.reward_alpha = sac.reward_alpha
        self.data = data
        base = sim or SimConfig()
        self.sim = base if self.preset.gravity else base.without_gravity()
        self.mask = np.asarray(self.preset.mask, dtype=np.float64)
        self.rng = np.random.default_rng(seed)

        self.state: Optional[BandState] = None
        self.scene: Optional[Scene] = None
        self.layout: Optional[TaskLayout] = None
        self.goal_cloud: Optional[np.ndarray] = None
        self.viewpoint: Optional[np.ndarray] = None
        self.t = 0
        logger.info(f"Environment initialized (preset={self.preset.name}, dof={self.preset.dof}, "
                    f"max_steps={task.max_steps})")

    # ==================== Layouts ====================

    def _layout(self, d_id: float, d_csd: float, band_seed: int) -> TaskLayout:
        builder = {"stretch-place": self._stretch_place, "untwist": self._untwist,
                   "install": self._install}[self.preset.name]
        return builder(d_id, d_csd, band_seed)

    def _stretch_place(self, d_id, d_csd, band_seed) -> TaskLayout:
        stretch = float(self.rng.uniform(*settings.STRETCH_PLACE_RANGE))
        center = np.array([0.0, 0.0, 0.05])
        band = init_band(d_id, d_csd, 0, 1.0, band_seed, self.data.n_nodes, center)
        heading = self.rng.uniform(0.0, 2.0 * np.pi)
        axis = np.array([np.cos(heading), np.sin(heading), 0.0])
        grasp = int(np.argmax((band.nodes - center) @ axis))

        radius = 0.5 * (d_id + d_csd)
        wrap = POLE_RADIUS + 0.5 * d_csd
        pole = center - (radius - wrap - 0.002) * axis
        obstacles: List[Obstacle] = [Capsule(np.array([pole[0], pole[1], 0.0]),
                                             np.array([pole[0], pole[1], POLE_HEIGHT]), POLE_RADIUS)]
        # taut band: two strands from the pole to the gripper plus a half wrap
        target = pole + 0.5 * (stretch * 2.0 * np.pi * radius - np.pi * wrap) * axis
        travel = np.linalg.norm(target - band.nodes[grasp]) / (self.sim.max_linear_speed * self.sim.dt)
        steps = min(self.task.max_steps, int(np.ceil(travel)) + settings.STRETCH_PLACE_HOLD_STEPS)
        goal = self._reference_rollout(band, obstacles, grasp, target, steps)
        return TaskLayout(band, goal, obstacles, grasp, target)

    def _reference_rollout(self, band: BandState, obstacles: List[Obstacle], grasp: int,
                           target: np.ndarray, steps: int) -> BandState:
        """Band after `steps` reference actions from the episode's initial scene"""
        state = band
        scene = Scene(list(obstacles), Gripper(position=band.nodes[grasp].copy()))
        for _ in range(steps):
            action = reference_action(scene.gripper, target, self.sim) * self.mask
            state, scene = sim_step(state, scene, action, self.sim)
        return state

    def _untwist(self, d_id, d_csd, band_seed) -> TaskLayout:
        magnitude = int(self.rng.integers(1, max(1, self.task.max_twist) + 1))
        twist = magnitude * (1 if self.rng.uniform() < 0.5 else -1)
        stretch = 1.2
        band = init_band(d_id, d_csd, twist, stretch, band_seed, self.data.n_nodes,
                         np.array([0.0, 0.0, 1.5 * d_csd + 0.002]))
        goal = init_band(d_id, d_csd, 0, stretch, band_seed, self.data.n_nodes,
                         np.array([0.0, 0.0, 0.5 * d_csd]))
        center = goal.nodes.mean(axis=0)
        planar = goal.nodes[:, :2] - center[:2]
        far = int(np.argmax(np.linalg.norm(planar, axis=1)))
        axis = planar[far] / np.linalg.norm(planar[far])
        reach = np.linalg.norm(planar[far]) - 0.5 * d_csd - POLE_RADIUS - 0.002
        obstacles: List[Obstacle] = [Plane(np.zeros(3), np.array([0.0, 0.0, 1.0]))]
        for sign in (1.0, -1.0):
            x, y = center[:2] + sign * reach * axis
            obstacles.append(Capsule(np.array([x, y, 0.0]), np.array([x, y, POLE_HEIGHT]),
                                     POLE_RADIUS))
        grasp = int(np.argmax(band.nodes[:, :2] @ np.array([-axis[1], axis[0]])))
        return TaskLayout(band, goal, obstacles, grasp)

    def _install(self, d_id, d_csd, band_seed) -> TaskLayout:
        depth = 0.6 * d_csd
        cylinder = GroovedCylinder(base=np.zeros(3), radius=0.5 * d_id + depth, height=0.1,
                                   groove_height=0.06, groove_depth=depth,
                                   groove_width=1.3 * d_csd)
        band = init_band(d_id, d_csd, 0, 1.0, band_seed, self.data.n_nodes,
                         np.array([0.0, 0.0, cylinder.height + 0.03]))
        goal = init_band(d_id, d_csd, 0, 1.0, band_seed, self.data.n_nodes,
                         np.array([0.0, 0.0, cylinder.groove_height]))
        grasp = int(np.argmax(band.nodes[:, 0]))
        return TaskLayout(band, goal, [cylinder], grasp)

    # ==================== Episode ====================

    def reset(self) -> Observation:
        d_id = float(self.rng.choice(self.data.inside_diameters))
        d_csd = float(self.rng.choice(self.data.cross_section_diameters))
        layout = self._layout(d_id, d_csd, int(self.rng.integers(2 ** 31)))
        self.layout = layout
        gripper = Gripper(position=layout.band.nodes[layout.grasp_node].copy())
        self.state = layout.band
        self.scene = Scene(layout.obstacles, gripper)
        self.goal_cloud = render_complete(layout.goal, self.rng, n=self.data.cloud_points)
        self.viewpoint = self._pick_viewpoint()
        self.t = 0
        logger.debug(f"Episode reset: ID={d_id} CSD={d_csd} twist={layout.band.twist_tag}")
        return self._observe()

    def _pick_viewpoint(self) -> Optional[np.ndarray]:
        for _ in range(MAX_VIEW_ATTEMPTS):
            viewpoint = sample_viewpoint(self.state, self.rng)
            try:
                render_partial(self.state, viewpoint, self.rng, n=self.data.cloud_points)
                return viewpoint
            except DegenerateViewpointError:
                continue
        logger.warning("No usable viewpoint; observations fall back to full-surface clouds")
        return None

    def _observe(self) -> Observation:
        cloud = None
        if self.viewpoint is not None:
            try:
                cloud = render_partial(self.state, self.viewpoint, self.rng,
                                       n=self.data.cloud_points)
            except DegenerateViewpointError as e:
                logger.debug(f"Step {self.t}: partial view unavailable ({e})")
        if cloud is None:
            cloud = render_complete(self.state, self.rng, n=self.data.cloud_points)
        return Observation(self.scene.gripper.proprioception(), cloud)

    def current_cloud(self) -> np.ndarray:
        """Full-surface cloud of the current band"""
        return render_complete(self.state, self.rng, n=self.data.cloud_points)

    def scripted_action(self) -> np.ndarray:
        """
        Next action of the motion that produced the goal

        Raises:
            ParameterRangeError: the preset's goal is not a simulated reference motion
        """
        if self.layout is None or self.layout.target is None:
            raise ParameterRangeError(f"preset '{self.preset.name}' has no reference motion")
        return reference_action(self.scene.gripper, self.layout.target, self.sim)

    def step(self, action: np.ndarray) -> StepResult:
        """
        Apply one masked action

        Args:
            action: 7 values (a_lin, a_ang, gripper); masked components are zeroed

        Returns:
            StepResult; the episode ends on success or after max_steps
        """
        if self.state is None:
            raise RuntimeError("step() before reset()")
        masked = np.asarray(action, dtype=np.float64) * self.mask
        self.state, self.scene = sim_step(self.state, self.scene, masked, self.sim)
        self.t += 1
        cd = chamfer(self.current_cloud(), self.goal_cloud)
        success = cd <= self.delta
        value = reward_from_cd(cd, self.delta, self.reward_alpha)
        done = success or self.t >= self.task.max_steps
        return StepResult(self._observe(), value, done, success, cd)
