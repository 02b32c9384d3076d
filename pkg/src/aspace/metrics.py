"""Evaluation metrics over trajectory logs: ER, SR, ACC, ECV, NTE, OTE.

A :class:`Trajectory` is the full 120 Hz record of one episode: the policy
actions, the controller's active target stream ``v_d``, the measured
feedback ``v`` in the same variable, joint states, tool poses, torques,
and the per-policy-step rewards.  Logs round-trip through a JSON-lines
format (one record per control step) without losing a bit of float64, so
replaying a log in the identical world reproduces it exactly.

Conventions, stated once here and used by the report headers: NTE averages
its per-dimension normalized errors arithmetically; OTE averages absolute
joint errors across joints and steps; ECV is a per-step probability.  The
pseudo-real world for offline replay is a declared perturbation of the
simulator (link masses and box parameters scaled, actions delayed), not
real hardware.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .actions import (
    ACTION_REPEAT,
    ActionSpaceConfig,
    ActionSpaceKind,
    feedback_vector,
    make_feedback,
    target_limits,
)
from .dynamics import DT_CTRL
from .robot import RobotModel, load_robot
from .rotations import rotation_to_rot6d
from .safety import ConstraintSet, check_constraints
from .tasks import TaskConfig, TaskEnv, load_task

SCHEMA_VERSION = 1


# ---- Trajectory container and JSONL IO -------------------------------------


@dataclass
class Trajectory:
    """One episode at control-step resolution.

    State arrays carry S+1 rows (initial state included); per-step arrays
    (actions applied, targets, torques) carry S rows.  ``rewards`` has one
    entry per policy step.  ``v_d``/``v_fb`` hold the target variable of
    the space (torque for jt, where tracking metrics do not apply).
    """

    space: str
    task: str
    robot: str
    seed: int
    goal: np.ndarray
    deploy: bool
    q: np.ndarray            # (S+1, n)
    dq: np.ndarray           # (S+1, n)
    ee_pos: np.ndarray       # (S+1, 3)
    ee_rot6: np.ndarray      # (S+1, 6)
    actions: np.ndarray      # (T, m) one row per policy step
    v_d: np.ndarray          # (S, mt)
    v_fb: np.ndarray         # (S+1, mt)
    tau: np.ndarray          # (S, n)
    rewards: np.ndarray      # (T,)
    box: np.ndarray | None = None        # (S+1, 3) x, y, yaw
    box_mass: float | None = None
    box_friction: float | None = None
    final_dist: float = float("nan")

    @property
    def n_ctrl_steps(self) -> int:
        return self.v_d.shape[0]

    @property
    def n_policy_steps(self) -> int:
        return self.actions.shape[0]


def save_trajectories(path: str | Path, trajs: list[Trajectory]) -> None:
    """Write episodes as JSON lines: a header, S step records, a footer each."""
    with open(path, "w") as f:
        for tr in trajs:
            header = {
                "kind": "header", "schema": SCHEMA_VERSION,
                "space": tr.space, "task": tr.task, "robot": tr.robot,
                "seed": tr.seed, "dt": DT_CTRL, "deploy": tr.deploy,
                "goal": tr.goal.tolist(),
                "q0": tr.q[0].tolist(), "dq0": tr.dq[0].tolist(),
                "steps": int(tr.n_ctrl_steps),
            }
            if tr.box is not None:
                header["box0"] = tr.box[0].tolist()
                header["box_mass"] = tr.box_mass
                header["box_friction"] = tr.box_friction
            f.write(json.dumps(header) + "\n")
            reps = ACTION_REPEAT
            for i in range(tr.n_ctrl_steps):
                rec = {
                    "kind": "step", "i": i, "t": i * DT_CTRL,
                    "a": tr.actions[i // reps].tolist(),
                    "vd": tr.v_d[i].tolist(),
                    "v": tr.v_fb[i].tolist(),
                    "q": tr.q[i].tolist(), "dq": tr.dq[i].tolist(),
                    "ee": tr.ee_pos[i].tolist() + tr.ee_rot6[i].tolist(),
                    "tau": tr.tau[i].tolist(),
                    "g": tr.goal.tolist(),
                }
                if (i + 1) % reps == 0:
                    rec["r"] = float(tr.rewards[i // reps])
                if tr.box is not None:
                    rec["box"] = tr.box[i].tolist()
                f.write(json.dumps(rec) + "\n")
            footer = {
                "kind": "final",
                "q": tr.q[-1].tolist(), "dq": tr.dq[-1].tolist(),
                "v": tr.v_fb[-1].tolist(),
                "ee": tr.ee_pos[-1].tolist() + tr.ee_rot6[-1].tolist(),
                "final_dist": tr.final_dist,
            }
            if tr.box is not None:
                footer["box"] = tr.box[-1].tolist()
            f.write(json.dumps(footer) + "\n")


def load_trajectories(path: str | Path) -> list[Trajectory]:
    """Parse a JSONL log; any malformed line aborts with its line number."""
    trajs: list[Trajectory] = []
    state = "want_header"
    cur: dict = {}
    rows: dict[str, list] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind == "header":
                    if state == "want_steps":
                        raise ValueError("header before previous episode ended")
                    if rec["schema"] != SCHEMA_VERSION:
                        raise ValueError(f"unsupported schema {rec['schema']}")
                    cur = rec
                    rows = {k: [] for k in
                            ("a", "vd", "v", "q", "dq", "ee", "tau", "r", "box")}
                    state = "want_steps"
                elif kind == "step":
                    if state != "want_steps":
                        raise ValueError("step record outside an episode")
                    for k in ("vd", "v", "q", "dq", "ee", "tau"):
                        rows[k].append(rec[k])
                    if "box" in rec:
                        rows["box"].append(rec["box"])
                    if rec["i"] % ACTION_REPEAT == 0:
                        rows["a"].append(rec["a"])
                    if "r" in rec:
                        rows["r"].append(rec["r"])
                elif kind == "final":
                    if state != "want_steps":
                        raise ValueError("final record outside an episode")
                    rows["q"].append(rec["q"])
                    rows["dq"].append(rec["dq"])
                    rows["v"].append(rec["v"])
                    rows["ee"].append(rec["ee"])
                    if "box" in rec:
                        rows["box"].append(rec["box"])
                    ee = np.asarray(rows["ee"], dtype=float)
                    trajs.append(Trajectory(
                        space=cur["space"], task=cur["task"], robot=cur["robot"],
                        seed=cur["seed"], goal=np.asarray(cur["goal"], dtype=float),
                        deploy=cur["deploy"],
                        q=np.asarray(rows["q"], dtype=float),
                        dq=np.asarray(rows["dq"], dtype=float),
                        ee_pos=ee[:, :3], ee_rot6=ee[:, 3:9],
                        actions=np.asarray(rows["a"], dtype=float),
                        v_d=np.asarray(rows["vd"], dtype=float),
                        v_fb=np.asarray(rows["v"], dtype=float),
                        tau=np.asarray(rows["tau"], dtype=float),
                        rewards=np.asarray(rows["r"], dtype=float),
                        box=np.asarray(rows["box"], dtype=float) if rows["box"] else None,
                        box_mass=cur.get("box_mass"),
                        box_friction=cur.get("box_friction"),
                        final_dist=float(rec.get("final_dist", "nan")),
                    ))
                    state = "want_header"
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: corrupt trajectory record ({exc})") from exc
    if state == "want_steps":
        raise ValueError(f"{path}: truncated log (episode without final record)")
    return trajs


# ---- Recorder (plugs into TaskEnv) -----------------------------------------


class TrajectoryRecorder:
    """Collects per-substep env data and splits it into Trajectories.

    In batched evaluation the per-env done step can differ; each env's
    episode is truncated at the policy step where its done flag first
    fired, so post-done integration is discarded.
    """

    def __init__(self) -> None:
        self.episodes: list[Trajectory] = []
        self._reset_buffers()

    def _reset_buffers(self) -> None:
        self._q: list[np.ndarray] = []
        self._dq: list[np.ndarray] = []
        self._ee: list[np.ndarray] = []
        self._ee6: list[np.ndarray] = []
        self._a: list[np.ndarray] = []
        self._vd: list[np.ndarray] = []
        self._vfb: list[np.ndarray] = []
        self._tau: list[np.ndarray] = []
        self._box: list[np.ndarray] = []
        self._r: list[np.ndarray] = []
        self._done_at: np.ndarray | None = None
        self._dist: np.ndarray | None = None
        self._env = None

    def on_reset(self, env: TaskEnv) -> None:
        self._reset_buffers()
        self._env = env
        self._done_at = np.full(env.n, -1, dtype=int)
        self._dist = np.full(env.n, np.nan)

    def _fb_vector(self, env: TaskEnv, fb) -> np.ndarray:
        if env.space.kind.base == "jt":
            return np.zeros((env.n, env.model.n_joints))
        return feedback_vector(env.space.kind, fb)

    def on_substep(self, env: TaskEnv, a: np.ndarray, tau: np.ndarray, fb) -> None:
        # fb is the feedback the controller saw (pre-step state).
        self._q.append(fb.q.copy())
        self._dq.append(fb.dq.copy())
        self._ee.append(fb.ee_pos.copy())
        self._ee6.append(rotation_to_rot6d(fb.ee_rot))
        self._vfb.append(self._fb_vector(env, fb))
        vd = env.ctrl.v_d if env.space.kind.base != "jt" else tau
        self._vd.append(np.asarray(vd).copy())
        self._tau.append(np.asarray(tau).copy())
        self._a.append(a.copy())
        if env.task.is_push:
            self._box.append(env.world.box_pose.copy())

    def on_policy_step(self, env: TaskEnv, reward: np.ndarray, done: np.ndarray,
                       info: dict) -> None:
        self._r.append(np.asarray(reward).copy())
        fresh = done & (self._done_at < 0)
        for i in np.flatnonzero(fresh):
            self._done_at[i] = len(self._r)
            self._dist[i] = info["dist"][i]

    def finish(self) -> list[Trajectory]:
        """Close the current batch, appending one Trajectory per env."""
        env = self._env
        if env is None or not self._q:
            return []
        fb = make_feedback(env.model, env.world.q, env.world.dq)
        q = np.asarray(self._q + [env.world.q.copy()])
        dq = np.asarray(self._dq + [env.world.dq.copy()])
        ee = np.asarray(self._ee + [fb.ee_pos.copy()])
        ee6 = np.asarray(self._ee6 + [rotation_to_rot6d(fb.ee_rot)])
        vfb = np.asarray(self._vfb + [self._fb_vector(env, fb)])
        vd = np.asarray(self._vd)
        tau = np.asarray(self._tau)
        a = np.asarray(self._a)
        r = np.asarray(self._r)
        box = np.asarray(self._box + [env.world.box_pose.copy()]) if self._box else None
        reps = ACTION_REPEAT
        for i in range(env.n):
            t_done = self._done_at[i] if self._done_at[i] > 0 else r.shape[0]
            s_done = t_done * reps
            dist = self._dist[i]
            if np.isnan(dist):
                dist = float(env._task_dist(fb.ee_pos)[i])
            self.episodes.append(Trajectory(
                space=env.space.kind.label, task=env.task.name,
                robot=env.model.name, seed=-1,
                goal=env.goal[i].copy(), deploy=env.space.deploy,
                q=q[: s_done + 1, i], dq=dq[: s_done + 1, i],
                ee_pos=ee[: s_done + 1, i], ee_rot6=ee6[: s_done + 1, i],
                actions=a[::reps][: t_done, i], v_d=vd[: s_done, i],
                v_fb=vfb[: s_done + 1, i], tau=tau[: s_done, i],
                rewards=r[: t_done, i],
                box=box[: s_done + 1, i] if box is not None else None,
                box_mass=float(np.asarray(env.box.mass)[i]) if env.box is not None else None,
                box_friction=float(np.asarray(env.box.friction)[i]) if env.box is not None else None,
                final_dist=float(dist),
            ))
        self._reset_buffers()
        return self.episodes


# ---- Rollout drivers --------------------------------------------------------


def rollout_policy(model: RobotModel, task: TaskConfig, space: ActionSpaceConfig,
                   policy_act, goals: np.ndarray, seed: int = 0) -> list[Trajectory]:
    """Evaluation protocol: one env per goal, deterministic policy, filters
    per the space config, success-hold early stop, full logs."""
    rec = TrajectoryRecorder()
    env = TaskEnv(model, task, space, n_envs=goals.shape[0], seed=seed,
                  auto_reset=False, recorder=rec)
    env.reset(seed=seed)
    env.goal[:] = goals[:, : env.goal.shape[1]]
    obs = env.observe()
    finished = np.zeros(env.n, dtype=bool)
    while not np.all(finished):
        obs, _, done, _ = env.step(policy_act(obs))
        finished |= done
    out = rec.finish()
    for tr in out:
        tr.seed = seed
    return out


def rollout_push_sequence(model: RobotModel, task: TaskConfig, space: ActionSpaceConfig,
                          policy_act, n_goals: int, n_worlds: int = 2,
                          seed: int = 0) -> list[Trajectory]:
    """Sequential-goal pushing protocol: one table session per world.

    Each world runs ``n_goals`` episodes back to back; the box stays where
    the previous episode left it while the arm re-homes and a fresh goal
    is drawn, mirroring uninterrupted tabletop evaluation.
    """
    rec = TrajectoryRecorder()
    env = TaskEnv(model, task, space, n_envs=n_worlds, seed=seed,
                  auto_reset=False, recorder=rec)
    env.reset(seed=seed)
    for g in range(n_goals):
        if g > 0:
            env.reset(keep_box=True)
        obs = env.observe()
        finished = np.zeros(env.n, dtype=bool)
        while not np.all(finished):
            obs, _, done, _ = env.step(policy_act(obs))
            finished |= done
        rec.finish()
    out = rec.episodes
    for tr in out:
        tr.seed = seed
    return out


def rollout_actions(model: RobotModel, task: TaskConfig, space: ActionSpaceConfig,
                    actions: np.ndarray, q0: np.ndarray, dq0: np.ndarray,
                    goal: np.ndarray, box0: np.ndarray | None = None,
                    box_mass=None, box_friction=None, seed: int = 0) -> list[Trajectory]:
    """Open-loop rollout of given action sequences (no policy in the loop).

    Args:
        actions: (T, N, m) or (T, m) action sequences, applied verbatim.
        q0, dq0, goal, box0: initial conditions, broadcast over N.

    Returns one Trajectory per sequence.
    """
    actions = np.asarray(actions, dtype=float)
    if actions.ndim == 2:
        actions = actions[:, None, :]
    t_len, n, _ = actions.shape
    rec = TrajectoryRecorder()
    env = TaskEnv(model, task, space, n_envs=n, seed=seed, auto_reset=False, recorder=rec)
    env.hold_steps = t_len + 1  # success never ends an open-loop replay early
    env.task = replace(env.task, reward=replace(env.task.reward, horizon=t_len))
    env.reset_to(np.broadcast_to(q0, (n, model.n_joints)),
                 np.broadcast_to(dq0, (n, model.n_joints)),
                 np.broadcast_to(goal, (n, env.goal.shape[1])),
                 box_pose=None if box0 is None else np.broadcast_to(box0, (n, 3)),
                 box_mass=box_mass, box_friction=box_friction)
    for t in range(t_len):
        env.step(actions[t])
    out = rec.finish()
    for tr in out:
        tr.seed = seed
    return out


# ---- Metrics ----------------------------------------------------------------


def ecv(trajs: list[Trajectory], cs: ConstraintSet) -> float:
    """Per-step probability that any velocity/acceleration/jerk bound is
    violated, measured on the logged joint motion and pooled over episodes.
    """
    if not trajs:
        raise ValueError("ecv needs at least one trajectory")
    total, violated = 0, 0
    for tr in trajs:
        flags = check_constraints(tr.q, cs, DT_CTRL)
        any_flag = flags.any(axis=-1)
        total += any_flag.shape[0]
        violated += int(any_flag.sum())
    return violated / total


def nte(traj: Trajectory, v_lo: np.ndarray, v_hi: np.ndarray) -> float:
    """Normalized tracking error: |v_d[t] - v[t+1]| / (v_hi - v_lo),
    averaged over dimensions then steps.  Undefined for torque logs."""
    if traj.space == "jt":
        raise ValueError("jt has no tracking target; NTE undefined")
    if traj.n_ctrl_steps < 1:
        raise ValueError("nte needs at least one control step")
    v_lo = np.asarray(v_lo, dtype=float)
    v_hi = np.asarray(v_hi, dtype=float)
    rng = v_hi - v_lo
    if np.any(rng <= 0):
        raise ValueError("degenerate target limits (v_hi must exceed v_lo)")
    err = np.abs(traj.v_d - traj.v_fb[1:]) / rng
    return float(err.mean())


@dataclass
class PerturbationProfile:
    """Pseudo-real world: scaled inertial/friction parameters plus a fixed
    actuation delay in policy steps (the first action is held during the
    delay)."""

    mass_scale: float = 1.2
    friction_scale: float = 1.3
    delay_steps: int = 1

    @classmethod
    def identity(cls) -> "PerturbationProfile":
        return cls(mass_scale=1.0, friction_scale=1.0, delay_steps=0)

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationProfile":
        return cls(mass_scale=float(d.get("mass_scale", 1.2)),
                   friction_scale=float(d.get("friction_scale", 1.3)),
                   delay_steps=int(d.get("delay_steps", 1)))


def perturb_model(model: RobotModel, profile: PerturbationProfile) -> RobotModel:
    """Scale link masses (and, physically, their inertia tensors)."""
    return replace(model,
                   mass=model.mass * profile.mass_scale,
                   inertia=model.inertia * profile.mass_scale)


def ote_replay(log: Trajectory, profile: PerturbationProfile,
               space: ActionSpaceConfig | None = None) -> tuple[np.ndarray, float]:
    """Replay a log's actions open-loop in the perturbed world.

    Rebuilds the task and action space from the log header, perturbs the
    arm/box, shifts the action sequence by the profile's delay (holding
    the first action), and reruns the full control pipeline.  Returns the
    per-control-step mean absolute joint error and its average.

    Raises:
        ValueError: if a space config is supplied whose kind differs from
            the log's.
    """
    model = load_robot(log.robot)
    kind = ActionSpaceKind.from_label(log.space)
    if space is None:
        space = ActionSpaceConfig.build(kind, model, deploy=log.deploy)
    elif space.kind != kind:
        raise ValueError(f"log is {log.space!r} but replay config is {space.kind.label!r}")
    task = load_task(log.task)
    sim_model = perturb_model(model, profile)
    mass = log.box_mass
    friction = log.box_friction
    if log.box is not None:
        mass = mass * profile.mass_scale
        friction = friction * profile.friction_scale
    delay = profile.delay_steps
    actions = log.actions
    if delay > 0:
        hold = np.repeat(actions[:1], min(delay, len(actions)), axis=0)
        rest = actions[:-delay] if delay < len(actions) else actions[:0]
        actions = np.concatenate([hold, rest], axis=0)
    replayed = rollout_actions(sim_model, task, space, actions,
                               q0=log.q[0], dq0=log.dq[0], goal=log.goal,
                               box0=log.box[0] if log.box is not None else None,
                               box_mass=mass, box_friction=friction,
                               seed=log.seed if log.seed >= 0 else 0)[0]
    steps = min(replayed.q.shape[0], log.q.shape[0])
    err = np.abs(replayed.q[:steps] - log.q[:steps]).mean(axis=-1)
    return err, float(err.mean())


# ---- Summaries ---------------------------------------------------------------


@dataclass
class MetricReport:
    """Aggregates for one (space, task) cell; None marks an inapplicable or
    unavailable metric (rendered as '-')."""

    space: str
    task: str
    n_episodes: int
    er_mean: float
    er_p5: float
    er_p95: float
    sr: float                      # fraction in [0, 1]
    acc: float                     # meters
    ecv: float | None = None
    nte: float | None = None
    ote: float | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "space": self.space, "task": self.task, "n_episodes": self.n_episodes,
            "er_mean": self.er_mean, "er_p5": self.er_p5, "er_p95": self.er_p95,
            "sr": self.sr, "acc": self.acc, "ecv": self.ecv, "nte": self.nte,
            "ote": self.ote, "notes": self.notes,
        }


def summarize(trajs: list[Trajectory], eps: float,
              ote_values: list[float] | None = None) -> MetricReport:
    """Fold a set of episodes into one report row.

    ER is the undiscounted per-episode reward sum (mean and 5th/95th
    percentiles across episodes); SR counts final distances strictly below
    eps; ACC is the mean final distance; ECV/NTE pool per-step means over
    all steps of all episodes; OTE averages the supplied per-episode
    replay errors when given.
    """
    if not trajs:
        raise ValueError("summarize needs at least one episode")
    model = load_robot(trajs[0].robot)
    kind = ActionSpaceKind.from_label(trajs[0].space)
    ers = np.asarray([float(tr.rewards.sum()) for tr in trajs])
    dists = np.asarray([tr.final_dist for tr in trajs])
    cs = ConstraintSet.from_model(model)
    ecv_val = ecv(trajs, cs)
    nte_val = None
    if kind.base != "jt":
        lo, hi = target_limits(kind, model)
        per_dim_steps = [np.abs(tr.v_d - tr.v_fb[1:]) / (hi - lo) for tr in trajs]
        pooled = np.concatenate([p.reshape(p.shape[0], -1) for p in per_dim_steps], axis=0)
        nte_val = float(pooled.mean())
    ote_val = float(np.mean(ote_values)) if ote_values else None
    return MetricReport(
        space=trajs[0].space, task=trajs[0].task, n_episodes=len(trajs),
        er_mean=float(ers.mean()),
        er_p5=float(np.percentile(ers, 5)),
        er_p95=float(np.percentile(ers, 95)),
        sr=float((dists < eps).mean()),
        acc=float(dists.mean()),
        ecv=ecv_val, nte=nte_val, ote=ote_val,
        notes={"eps": eps},
    )
