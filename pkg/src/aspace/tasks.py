"""Reaching and pushing tasks over the simulated arm, vectorized.

A :class:`TaskEnv` steps N worlds in lockstep: policy actions arrive at
60 Hz, each action is held for two 120 Hz controller/physics substeps, and
the reward is evaluated once per policy step on the post-step state.

Observations (fixed layout per task):

* reach: [q, dq, ee position (3), goal (3)]
* push:  [q, dq, ee position (3), goal (2), box position (3), box yaw]

Episodes end at the horizon; evaluation additionally ends an episode once
success has been held for ``success_hold`` seconds.  Training resets
re-randomize the goal (and for pushing, the box pose, mass, and friction
inside the configured ranges).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .actions import (
    ACTION_REPEAT,
    ActionSpaceConfig,
    ControllerState,
    action_dim,
    compute_torque,
    init_controller_state,
    make_feedback,
)
from .dynamics import DT_CTRL, BoxParams, WorldState, contact_step, forward_step
from .robot import Pose, RobotModel

DT_POLICY = ACTION_REPEAT * DT_CTRL


@dataclass
class RewardConfig:
    """Reward weights plus the episode-shape constants of the MDP.

    All weights are nonnegative; ``eps`` is the success radius shared by
    the reward gate and the SR/ACC reporting; ``horizon`` and ``gamma``
    live here with the rest of the task's scalar knobs.
    """

    lam_dist: float = 1.0
    lam_exact: float = 5.0
    lam_vel: float = 0.01
    lam_neutral: float = 0.05
    lam_limit: float = 1.0
    lam_smooth: float = 0.05
    lam_col: float = 1.0
    eps: float = 0.02      # success radius (m)
    z_col: float = 0.02    # tool height (m) below which pushing penalizes
    horizon: int = 150     # policy steps per episode
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("success radius must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("discount must lie in [0, 1]")


@dataclass
class TaskConfig:
    """One task cell: robot, goal region, reward weights."""

    name: str = "reach"
    robot: str = "planar3"
    reset_noise: float = 0.05
    goal_min: np.ndarray = field(default_factory=lambda: np.array([0.25, -0.33, 0.03]))
    goal_max: np.ndarray = field(default_factory=lambda: np.array([0.58, 0.33, 0.03]))
    reward: RewardConfig = field(default_factory=RewardConfig)
    success_hold: float = 0.5
    # pushing only:
    box_half_extents: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.03]))
    box_mass: float = 0.5
    box_friction: float = 0.4
    tip_radius: float = 0.02
    spawn_min: np.ndarray = field(default_factory=lambda: np.array([0.35, -0.15]))
    spawn_max: np.ndarray = field(default_factory=lambda: np.array([0.50, 0.15]))
    rand_friction: tuple[float, float] | None = (0.2, 0.6)
    rand_mass: tuple[float, float] | None = (0.3, 0.8)

    @property
    def is_push(self) -> bool:
        return self.name == "push"

    @property
    def horizon(self) -> int:
        return self.reward.horizon


def task_from_dict(data: dict) -> TaskConfig:
    """Build a TaskConfig from parsed JSON; unknown task names rejected."""
    name = data.get("name", "reach")
    if name not in ("reach", "push"):
        raise ValueError(f"unknown task '{name}' (expected 'reach' or 'push')")
    cfg = TaskConfig(name=name)
    cfg.robot = data.get("robot", cfg.robot)
    cfg.reset_noise = float(data.get("reset_noise", cfg.reset_noise))
    if "goal" in data:
        cfg.goal_min = np.asarray(data["goal"]["min"], dtype=float)
        cfg.goal_max = np.asarray(data["goal"]["max"], dtype=float)
    if "reward" in data:
        cfg.reward = RewardConfig(**data["reward"])
    if "horizon" in data:
        cfg.reward.horizon = int(data["horizon"])
        if cfg.reward.horizon < 1:
            raise ValueError("horizon must be at least 1")
    cfg.success_hold = float(data.get("success_hold", cfg.success_hold))
    box = data.get("box", {})
    if box:
        cfg.box_half_extents = np.asarray(box.get("half_extents", cfg.box_half_extents), dtype=float)
        cfg.box_mass = float(box.get("mass", cfg.box_mass))
        cfg.box_friction = float(box.get("friction", cfg.box_friction))
        cfg.tip_radius = float(box.get("tip_radius", cfg.tip_radius))
    if "spawn" in data:
        cfg.spawn_min = np.asarray(data["spawn"]["min"], dtype=float)
        cfg.spawn_max = np.asarray(data["spawn"]["max"], dtype=float)
    rand = data.get("randomize")
    if rand is not None:
        cfg.rand_friction = tuple(rand["friction"]) if "friction" in rand else None
        cfg.rand_mass = tuple(rand["mass"]) if "mass" in rand else None
    return cfg


def load_task(name_or_path: str | Path) -> TaskConfig:
    """Load a task config from a packaged name ('reach', 'push') or a path."""
    name = str(name_or_path)
    if "/" not in name and not name.endswith(".json"):
        ref = resources.files("aspace").joinpath(f"data/task_{name}.json")
        if ref.is_file():
            return task_from_dict(json.loads(ref.read_text()))
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(f"unknown task '{name_or_path}' (not packaged, not a file)")
    return task_from_dict(json.loads(path.read_text()))


def domain_randomize(box: BoxParams, rand_friction: tuple[float, float] | None,
                     rand_mass: tuple[float, float] | None,
                     rng: np.random.Generator) -> BoxParams:
    """Resample box friction and mass uniformly inside the given ranges.

    Geometry and contact constants pass through unchanged; a None range
    keeps the nominal value.  Array-valued mass/friction resample per
    entry.
    """
    for name, rng_pair in (("friction", rand_friction), ("mass", rand_mass)):
        if rng_pair is not None and rng_pair[0] > rng_pair[1]:
            raise ValueError(f"{name} range has lo > hi")
    mass = box.mass
    friction = box.friction
    if rand_mass is not None:
        mass = rng.uniform(rand_mass[0], rand_mass[1], np.shape(box.mass))
        mass = mass if np.shape(box.mass) else float(mass)
    if rand_friction is not None:
        friction = rng.uniform(rand_friction[0], rand_friction[1], np.shape(box.friction))
        friction = friction if np.shape(box.friction) else float(friction)
    return BoxParams(half_extents=box.half_extents, mass=mass, friction=friction,
                     tip_radius=box.tip_radius, k_normal=box.k_normal,
                     d_normal=box.d_normal)


def _limit_proximity(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Sum over joints of exp(-30 (q - nearer limit)^2)."""
    d_lo = np.abs(q - model.q_min)
    d_hi = np.abs(model.q_max - q)
    nearer = np.minimum(d_lo, d_hi)
    return np.sum(np.exp(-30.0 * nearer * nearer), axis=-1)


def reach_reward(model: RobotModel, rc: RewardConfig, q, dq, ee_pos, goal, a, a_prev) -> np.ndarray:
    """Shaped reaching reward on the post-step state.

    Attraction plus an at-goal bonus (with a quiet-arm sweetener), minus
    velocity, action-smoothness, neutral-posture, and limit-proximity
    penalties.
    """
    d = np.linalg.norm(ee_pos - goal, axis=-1)
    dq2 = np.sum(dq * dq, axis=-1)
    r_dist = rc.lam_dist / (1.0 + d * d)
    r_exact = (d < rc.eps) * (rc.lam_exact + 1.0 / (1.0 + 100.0 * dq2))
    pen = (
        rc.lam_vel * dq2
        + rc.lam_smooth * np.linalg.norm(a - a_prev, axis=-1)
        + rc.lam_neutral * np.linalg.norm(model.q_def - q, axis=-1)
        + rc.lam_limit * _limit_proximity(model, q)
    )
    return r_dist + r_exact - pen


def push_reward(model: RobotModel, rc: RewardConfig, q, dq, ee_pos, goal_xy,
                box_pose, box_hz, a, a_prev) -> np.ndarray:
    """Shaped pushing reward: the reach terms aimed at the box, plus box-to
    -goal attraction and a low-tool collision penalty."""
    obj = np.concatenate(
        [box_pose[..., 0:2], np.broadcast_to(box_hz, box_pose[..., :1].shape)], axis=-1
    )
    d_ee = np.linalg.norm(ee_pos - obj, axis=-1)
    d_box = np.linalg.norm(box_pose[..., 0:2] - goal_xy, axis=-1)
    dq2 = np.sum(dq * dq, axis=-1)
    r_dist = rc.lam_dist / (1.0 + d_ee * d_ee)
    r_exact = (d_ee < rc.eps) * (rc.lam_exact + 1.0 / (1.0 + 100.0 * dq2))
    r_push = rc.lam_dist / (1.0 + d_box * d_box)
    pen = (
        rc.lam_vel * dq2
        + rc.lam_smooth * np.linalg.norm(a - a_prev, axis=-1)
        + rc.lam_neutral * np.linalg.norm(model.q_def - q, axis=-1)
        + rc.lam_limit * _limit_proximity(model, q)
        + rc.lam_col * (ee_pos[..., 2] < rc.z_col)
    )
    return r_dist + r_exact + r_push - pen


def goal_grid(task: TaskConfig, nx: int = 4, ny: int = 4, nz: int = 1) -> np.ndarray:
    """Fixed evaluation grid spanning the goal region (reach: 3D points)."""
    lo, hi = task.goal_min, task.goal_max
    axes = []
    for i, count in enumerate(((nx, ny, nz))[: lo.shape[0]]):
        if count <= 1 or hi[i] <= lo[i]:
            axes.append(np.array([(lo[i] + hi[i]) * 0.5]))
        else:
            pad = 0.1 * (hi[i] - lo[i])
            axes.append(np.linspace(lo[i] + pad, hi[i] - pad, count))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


class TaskEnv:
    """Vectorized task environment bound to one action space.

    Args:
        model: the arm (or a perturbed copy for replay).
        task: task configuration.
        space: action-space configuration (deploy flag controls filters).
        n_envs: number of parallel worlds.
        seed: base seed; per-env streams are spawned from it.
        auto_reset: reset finished envs inside step() (training mode).
        recorder: optional trajectory recorder with on_reset/on_substep/
            on_policy_step hooks (see aspace.metrics).
    """

    def __init__(self, model: RobotModel, task: TaskConfig, space: ActionSpaceConfig,
                 n_envs: int = 1, seed: int = 0, auto_reset: bool = True, recorder=None):
        self.model = model
        self.task = task
        self.space = space
        self.n = n_envs
        self.auto_reset = auto_reset
        self.recorder = recorder
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_envs)]
        self.act_dim = action_dim(space.kind, model)
        nj = model.n_joints
        self.obs_dim = 2 * nj + 3 + (2 + 4 if task.is_push else 3)
        self.world: WorldState | None = None
        self.ctrl: ControllerState | None = None
        self.goal = np.zeros((n_envs, 2 if task.is_push else 3))
        self.t = np.zeros(n_envs, dtype=int)
        self.hold = np.zeros(n_envs, dtype=int)
        self.a_prev = np.zeros((n_envs, self.act_dim))
        self.box: BoxParams | None = None
        self.hold_steps = max(int(round(task.success_hold / DT_POLICY)), 1)

    # ---- Resets -----------------------------------------------------------

    def _sample_reset(self, idx: list[int], keep_box: bool = False) -> None:
        nj = self.model.n_joints
        for i in idx:
            rng = self.rngs[i]
            q = self.model.q_def + rng.uniform(-self.task.reset_noise, self.task.reset_noise, nj)
            self.world.q[i] = np.clip(q, self.model.q_min, self.model.q_max)
            self.world.dq[i] = 0.0
            self.goal[i] = rng.uniform(self.task.goal_min, self.task.goal_max)[: self.goal.shape[1]]
            if self.task.is_push:
                if not keep_box:
                    xy = rng.uniform(self.task.spawn_min, self.task.spawn_max)
                    yaw = rng.uniform(-0.3, 0.3)
                    self.world.box_pose[i] = np.array([xy[0], xy[1], yaw])
                    self.world.box_vel[i] = 0.0
                if self.task.rand_friction is not None:
                    self.box.friction[i] = rng.uniform(*self.task.rand_friction)
                if self.task.rand_mass is not None:
                    self.box.mass[i] = rng.uniform(*self.task.rand_mass)
                # Keep the goal away from the current box pose.
                for _ in range(20):
                    if np.linalg.norm(self.goal[i] - self.world.box_pose[i][:2]) >= 0.08:
                        break
                    self.goal[i] = rng.uniform(self.task.goal_min, self.task.goal_max)[:2]
            self.t[i] = 0
            self.hold[i] = 0
            self.a_prev[i] = 0.0

    def _alloc(self) -> None:
        nj = self.model.n_joints
        box_pose = np.zeros((self.n, 3)) if self.task.is_push else None
        box_vel = np.zeros((self.n, 3)) if self.task.is_push else None
        self.world = WorldState(q=np.zeros((self.n, nj)), dq=np.zeros((self.n, nj)),
                                box_pose=box_pose, box_vel=box_vel)
        if self.task.is_push:
            self.box = BoxParams(
                half_extents=np.asarray(self.task.box_half_extents, dtype=float),
                mass=np.full(self.n, self.task.box_mass),
                friction=np.full(self.n, self.task.box_friction),
                tip_radius=self.task.tip_radius,
            )

    def reset(self, seed: int | None = None, keep_box: bool = False) -> np.ndarray:
        """Reset all worlds; an explicit seed replaces the rng streams."""
        if seed is not None:
            self.rngs = [np.random.default_rng(s)
                         for s in np.random.SeedSequence(seed).spawn(self.n)]
        keep = keep_box and self.world is not None and self.task.is_push
        if self.world is None:
            self._alloc()
        self._sample_reset(list(range(self.n)), keep_box=keep)
        self._reset_controller()
        if self.recorder is not None:
            self.recorder.on_reset(self)
        return self._obs()

    def reset_to(self, q: np.ndarray, dq: np.ndarray, goal: np.ndarray,
                 box_pose: np.ndarray | None = None,
                 box_mass: np.ndarray | float | None = None,
                 box_friction: np.ndarray | float | None = None) -> np.ndarray:
        """Deterministic reset to explicit states (replay entry point)."""
        if self.world is None:
            self._alloc()
        self.world.q[:] = q
        self.world.dq[:] = dq
        self.goal[:] = goal
        if self.task.is_push:
            self.world.box_pose[:] = box_pose
            self.world.box_vel[:] = 0.0
            if box_mass is not None:
                self.box.mass[:] = box_mass
            if box_friction is not None:
                self.box.friction[:] = box_friction
        self.t[:] = 0
        self.hold[:] = 0
        self.a_prev[:] = 0.0
        self._reset_controller()
        if self.recorder is not None:
            self.recorder.on_reset(self)
        return self._obs()

    def _reset_controller(self) -> None:
        fb = make_feedback(self.model, self.world.q, self.world.dq)
        self.ctrl = init_controller_state(self.space, self.model, fb)
        self.world.time = 0.0
        self.world.step = 0

    def _reset_controller_for(self, idx: list[int]) -> None:
        # Per-env re-init inside a batch: rebuild full state, splice rows.
        fb = make_feedback(self.model, self.world.q, self.world.dq)
        fresh = init_controller_state(self.space, self.model, fb)
        for i in idx:
            self.ctrl.v_d[i] = fresh.v_d[i]
            self.ctrl.q_d_prev[i] = fresh.q_d_prev[i]
            self.ctrl.q_d_int[i] = fresh.q_d_int[i]
            self.ctrl.dq_d_policy[i] = fresh.dq_d_policy[i]
            if self.ctrl.filter is not None:
                self.ctrl.filter.lp.y[i] = fresh.filter.lp.y[i]
                self.ctrl.filter.rl.x[i] = fresh.filter.rl.x[i]
                for d_old, d_new in zip(self.ctrl.filter.rl.derivs, fresh.filter.rl.derivs):
                    d_old[i] = d_new[i]

    # ---- Observation and distances ---------------------------------------

    def observe(self) -> np.ndarray:
        """Current observation (recompute after mutating goals externally)."""
        return self._obs()

    def _obs(self) -> np.ndarray:
        fb = make_feedback(self.model, self.world.q, self.world.dq)
        parts = [self.world.q, self.world.dq, fb.ee_pos, self.goal]
        if self.task.is_push:
            hz = self.task.box_half_extents[2]
            box3 = np.concatenate(
                [self.world.box_pose[:, :2], np.full((self.n, 1), hz)], axis=-1
            )
            parts += [box3, self.world.box_pose[:, 2:3]]
        return np.concatenate(parts, axis=-1)

    def _task_dist(self, ee_pos: np.ndarray) -> np.ndarray:
        if self.task.is_push:
            return np.linalg.norm(self.world.box_pose[:, :2] - self.goal, axis=-1)
        return np.linalg.norm(ee_pos - self.goal, axis=-1)

    def done_mask(self) -> np.ndarray:
        """Which environments have finished their current episode."""
        done = self.t >= self.task.horizon
        if not self.auto_reset:
            done = done | (self.hold >= self.hold_steps)
        return done

    # ---- Stepping ---------------------------------------------------------

    def step(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
        """One 60 Hz policy step (two controller/physics substeps)."""
        if not self.auto_reset and np.all(self.done_mask()):
            raise RuntimeError("step() after all episodes finished; reset first")
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        if a.shape != (self.n, self.act_dim):
            raise ValueError(f"expected action shape {(self.n, self.act_dim)}, got {a.shape}")
        self.ctrl.phase = 0
        for _ in range(ACTION_REPEAT):
            fb = make_feedback(self.model, self.world.q, self.world.dq)
            tau = compute_torque(self.space, a, fb, self.ctrl, self.model)
            wrench = None
            if self.task.is_push:
                self.world, wrench = contact_step(
                    self.world, self.box, Pose(position=fb.ee_pos, rotation=fb.ee_rot),
                    ee_vel=fb.ee_twist,
                )
            self.world = forward_step(self.model, self.world, tau, external_wrench=wrench)
            if self.recorder is not None:
                self.recorder.on_substep(self, a, tau, fb)

        fb = make_feedback(self.model, self.world.q, self.world.dq)
        rc = self.task.reward
        if self.task.is_push:
            reward = push_reward(self.model, rc, self.world.q, self.world.dq, fb.ee_pos,
                                 self.goal, self.world.box_pose,
                                 self.task.box_half_extents[2], a, self.a_prev)
        else:
            reward = reach_reward(self.model, rc, self.world.q, self.world.dq, fb.ee_pos,
                                  self.goal, a, self.a_prev)
        self.a_prev = a.copy()
        self.t += 1

        dist = self._task_dist(fb.ee_pos)
        success = dist < rc.eps
        self.hold = np.where(success, self.hold + 1, 0)
        done = self.t >= self.task.horizon
        if not self.auto_reset:
            done = done | (self.hold >= self.hold_steps)
        info = {"dist": dist, "success": success}
        if self.recorder is not None:
            self.recorder.on_policy_step(self, reward, done, info)
        if self.auto_reset and np.any(done):
            # Episodes end by the clock, never in an absorbing state, so hand
            # the pre-reset observation to the learner for bootstrapping.
            info["final_obs"] = self._obs()
            idx = [int(i) for i in np.flatnonzero(done)]
            self._sample_reset(idx)
            self._reset_controller_for(idx)
        return self._obs(), reward, done, info
