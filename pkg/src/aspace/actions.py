"""The thirteen action spaces: policy action in [-1, 1] to joint torques.

Structure shared by all spaces except raw torque (jt):

1. Once per 60 Hz policy step, the action updates the space's control
   target ``v_d`` (joint positions, joint velocities, a Cartesian pose as
   position plus 6D orientation, or a Cartesian twist).  Absolute spaces
   scale the action into the target's limits; delta spaces move a
   reference by at most ``c * dt`` per step, where the reference is live
   feedback (oi-) or the previous target (mi-).
2. At each 120 Hz controller step the target is interpreted down to a
   joint position/velocity pair (Cartesian spaces run differential IK,
   velocity spaces integrate) and a joint impedance controller turns the
   pair into torques, plus gravity compensation.

``ControllerState`` is the controller's only memory; it resets to current
feedback at episode start so the first zero action commands zero motion
for velocity and delta spaces.  In deployment mode (evaluation and
replay), targets additionally pass through the safety filters before the
impedance loop; training never filters to keep the step Markov.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .dynamics import DT_CTRL, gravity_torque, mass_matrix
from .robot import RobotModel, chain_frames, ik_velocity
from .rotations import rot6d_degenerate, rot6d_to_rotation, rotation_log, rotation_to_rot6d
from .safety import FilterState, RateBounds, low_pass, rate_limit

DT_POLICY = 1.0 / 60.0
ACTION_REPEAT = 2  # controller steps per policy step


class ActionSpaceKind(Enum):
    """The benchmarked action spaces, in canonical report order."""

    JT = "jt"
    JP = "jp"
    OI_JP = "oi-jp"
    MI_JP = "mi-jp"
    JV = "jv"
    OI_JV = "oi-jv"
    MI_JV = "mi-jv"
    CP = "cp"
    OI_CP = "oi-cp"
    MI_CP = "mi-cp"
    CV = "cv"
    OI_CV = "oi-cv"
    MI_CV = "mi-cv"

    @property
    def label(self) -> str:
        return self.value

    @property
    def base(self) -> str:
        """Underlying target variable: jt, jp, jv, cp, or cv."""
        return self.value.split("-")[-1]

    @property
    def delta(self) -> str | None:
        """Delta mode: 'oi' (feedback reference), 'mi' (target reference), or None."""
        return self.value.split("-")[0] if "-" in self.value else None

    @classmethod
    def from_label(cls, label: str) -> "ActionSpaceKind":
        for kind in cls:
            if kind.value == label:
                return kind
        raise ValueError(f"unknown action space '{label}'; valid: {[k.value for k in cls]}")


ALL_SPACES: tuple[ActionSpaceKind, ...] = tuple(ActionSpaceKind)


@dataclass
class Feedback:
    """Measured state consumed by the controllers, possibly batched."""

    q: np.ndarray
    dq: np.ndarray
    ee_pos: np.ndarray
    ee_rot: np.ndarray
    ee_twist: np.ndarray


def make_feedback(model: RobotModel, q: np.ndarray, dq: np.ndarray) -> Feedback:
    """Assemble feedback with a single kinematics pass."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    p, rot, z = chain_frames(model, q)
    r_last = rot[..., -1, :, :]
    ee_pos = p[..., -1, :] + (r_last @ model.ee_offset_pos)
    ee_rot = r_last @ model.ee_offset_rot
    arm = ee_pos[..., None, :] - p
    jv = np.cross(z, arm)
    lin = np.einsum("...ni,...n->...i", jv, dq)
    ang = np.einsum("...ni,...n->...i", z, dq)
    return Feedback(q=q, dq=dq, ee_pos=ee_pos, ee_rot=ee_rot,
                    ee_twist=np.concatenate([lin, ang], axis=-1))


@dataclass
class Gains:
    """Joint impedance gains and the Cartesian pose-loop gain."""

    k: np.ndarray           # (n,) stiffness, N m / rad
    d: np.ndarray           # (n,) damping, N m s / rad
    kp_cart: float = 5.0    # 1/s, proportional pose-error to twist

    @classmethod
    def for_model(cls, model: RobotModel, omega: float = 10.0, zeta: float = 1.0,
                  kp_cart: float = 5.0) -> "Gains":
        """Stiffness matched to the arm's inertia at the neutral posture.

        k_i = omega^2 M_ii(q_def), d_i = 2 zeta omega M_ii(q_def): every
        joint closes at the same natural frequency regardless of how light
        the distal links are.
        """
        m_diag = np.diagonal(mass_matrix(model, model.q_def))
        return cls(k=omega * omega * m_diag, d=2.0 * zeta * omega * m_diag, kp_cart=kp_cart)


@dataclass
class DeltaConfig:
    """Per-step target increment bound: |v_d - ref| <= c * dt per dimension."""

    c: np.ndarray
    dt: float = DT_POLICY


def action_dim(kind: ActionSpaceKind, model: RobotModel) -> int:
    base = kind.base
    if base in ("jt", "jp", "jv"):
        return model.n_joints
    if base == "cv":
        return 6
    return 9  # cp: position plus 6D orientation


def target_limits(kind: ActionSpaceKind, model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper bounds of the space's target variable."""
    base = kind.base
    if base == "jt":
        return -model.tau_max, model.tau_max
    if base == "jp":
        return model.q_min, model.q_max
    if base == "jv":
        return -model.dq_max, model.dq_max
    if base == "cv":
        hi = np.concatenate([np.full(3, model.v_lin_max), np.full(3, model.v_ang_max)])
        return -hi, hi
    lo = np.concatenate([model.ws_min, -np.ones(6)])
    hi = np.concatenate([model.ws_max, np.ones(6)])
    return lo, hi


def default_delta_c(kind: ActionSpaceKind, model: RobotModel) -> np.ndarray:
    """Default per-dimension c: the bound of the target's time derivative."""
    base = kind.base
    if base == "jp":
        return np.asarray(model.dq_max, dtype=float)
    if base == "jv":
        return np.asarray(model.ddq_max, dtype=float)
    if base == "cp":
        return np.concatenate([np.full(3, model.v_lin_max), np.full(6, model.v_ang_max)])
    if base == "cv":
        return np.concatenate([np.full(3, model.a_lin_max), np.full(3, model.a_ang_max)])
    raise ValueError(f"no delta variant exists for base '{base}'")


def rate_bounds(kind: ActionSpaceKind, model: RobotModel) -> RateBounds | None:
    """Safety-filter bounds for the space's target stream (None for jt)."""
    base = kind.base
    lo, hi = target_limits(kind, model)
    if base == "jt":
        return None
    if base == "jp":
        rates = (model.dq_max, model.ddq_max, model.dddq_max)
    elif base == "jv":
        rates = (model.ddq_max, model.dddq_max)
    elif base == "cp":
        rates = (
            np.concatenate([np.full(3, model.v_lin_max), np.full(6, model.v_ang_max)]),
            np.concatenate([np.full(3, model.a_lin_max), np.full(6, model.a_ang_max)]),
        )
    else:  # cv
        rates = (np.concatenate([np.full(3, model.a_lin_max), np.full(3, model.a_ang_max)]),)
    return RateBounds(lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float), rates=rates)


def feedback_vector(kind: ActionSpaceKind, fb: Feedback) -> np.ndarray:
    """Current feedback expressed in the space's target variable."""
    base = kind.base
    if base == "jp":
        return fb.q.copy()
    if base == "jv":
        return fb.dq.copy()
    if base == "cv":
        return fb.ee_twist.copy()
    if base == "cp":
        return np.concatenate([fb.ee_pos, rotation_to_rot6d(fb.ee_rot)], axis=-1)
    raise ValueError("jt has no feedback variable")


@dataclass
class ActionSpaceConfig:
    """Everything needed to run one action space on one robot."""

    kind: ActionSpaceKind
    gains: Gains
    delta: DeltaConfig | None = None
    ik_damping: float = 1e-2
    k_null: float = 1.0
    deploy: bool = False          # enable safety filters (evaluation/replay)
    lp_cutoff_hz: float = 5.0
    lo: np.ndarray | None = field(default=None, init=False)
    hi: np.ndarray | None = field(default=None, init=False)
    bounds: RateBounds | None = field(default=None, init=False)

    @classmethod
    def build(cls, kind: ActionSpaceKind | str, model: RobotModel,
              gains: Gains | None = None, c: np.ndarray | float | None = None,
              deploy: bool = False, **kwargs) -> "ActionSpaceConfig":
        if isinstance(kind, str):
            kind = ActionSpaceKind.from_label(kind)
        gains = gains if gains is not None else Gains.for_model(model)
        delta = None
        if kind.delta is not None:
            c_arr = np.broadcast_to(
                np.asarray(c if c is not None else default_delta_c(kind, model), dtype=float),
                (action_dim(kind, model),),
            ).copy()
            delta = DeltaConfig(c=c_arr)
        return cls(kind=kind, gains=gains, delta=delta, deploy=deploy, **kwargs).attach(model)

    def attach(self, model: RobotModel) -> "ActionSpaceConfig":
        self.lo, self.hi = (np.asarray(b, dtype=float) for b in target_limits(self.kind, model))
        self.bounds = rate_bounds(self.kind, model)
        return self


@dataclass
class ControllerState:
    """Controller memory; arrays may carry a leading batch dimension.

    v_d is the active control target in the space's variable.  q_d_prev
    backs the position family's target differentiation, q_d_int is the
    joint-position integrator of the velocity families, and phase counts
    controller substeps since the last policy action.
    """

    v_d: np.ndarray
    q_d_prev: np.ndarray
    q_d_int: np.ndarray
    dq_d_policy: np.ndarray
    phase: int = 0
    filter: FilterState | None = None


def init_controller_state(cfg: ActionSpaceConfig, model: RobotModel, fb: Feedback) -> ControllerState:
    """Episode-start reset: targets initialize to current feedback."""
    if cfg.kind.base == "jt":
        v0 = np.zeros_like(fb.q)
    else:
        v0 = feedback_vector(cfg.kind, fb)
    st = ControllerState(
        v_d=v0,
        q_d_prev=fb.q.copy(),
        q_d_int=fb.q.copy(),
        dq_d_policy=np.zeros_like(fb.q),
    )
    if cfg.deploy and cfg.kind.base != "jt":
        bounds = rate_bounds(cfg.kind, model)
        st.filter = FilterState.init(v0, n_rates=len(bounds.rates))
    return st


def scale_action(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Affine map of [-1, 1] onto [lo, hi]; input is clipped first."""
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    return lo + (a + 1.0) * 0.5 * (np.asarray(hi) - np.asarray(lo))


def delta_update(mode: str, ref: np.ndarray, a: np.ndarray, cfg: DeltaConfig,
                 lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """One delta-space target update: clip(ref + c * a * dt) to [lo, hi].

    For ref inside [lo, hi] the result never moves further than c * dt
    from the reference (the per-step motion bound the delta spaces exist
    for).  ``mode`` is accepted for symmetry with the dispatch tables; the
    update rule itself is identical for oi- and mi-.
    """
    if mode not in ("oi", "mi"):
        raise ValueError(f"unknown delta mode '{mode}'")
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    step = (cfg.c * cfg.dt) * a
    return np.clip(ref + step, lo, hi)


def jic_torque(gains: Gains, q_d: np.ndarray, dq_d: np.ndarray, fb: Feedback) -> np.ndarray:
    """Joint impedance law: K (q_d - q) + D (dq_d - dq).  No gravity term."""
    return gains.k * (q_d - fb.q) + gains.d * (dq_d - fb.dq)


def _update_target(cfg: ActionSpaceConfig, a: np.ndarray, fb: Feedback, st: ControllerState) -> None:
    # Policy-rate target update (first controller substep of the step).
    kind = cfg.kind
    prev = st.v_d
    if kind.delta is None:
        st.v_d = scale_action(a, cfg.lo, cfg.hi)
    else:
        ref = feedback_vector(kind, fb) if kind.delta == "oi" else st.v_d
        st.v_d = delta_update(kind.delta, ref, a, cfg.delta, cfg.lo, cfg.hi)
    if kind.base == "cp":
        # A policy is free to emit 6D vectors Gram-Schmidt cannot use
        # (parallel columns); those hold the previous orientation target.
        bad = rot6d_degenerate(st.v_d[..., 3:9])
        if np.any(bad):
            st.v_d[..., 3:9] = np.where(bad[..., None], prev[..., 3:9], st.v_d[..., 3:9])
    if kind.base == "jp":
        st.dq_d_policy = (st.v_d - st.q_d_prev) / DT_POLICY
        st.q_d_prev = st.v_d.copy()


def base_targets(cfg: ActionSpaceConfig, fb: Feedback, st: ControllerState,
                 model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """Interpret the active target down to a joint (q_d, dq_d) pair.

    Runs at the controller rate: Cartesian spaces re-evaluate their
    feedback loops (pose error, differential IK) against fresh state, and
    the velocity families advance their joint-position integrator by one
    controller period (clamped to the joint range as anti-windup).
    """
    kind = cfg.kind
    v_eff = st.v_d
    dq_d_filtered = None
    if st.filter is not None:
        prev = st.filter.rl.x.copy()
        y = low_pass(st.filter.lp, v_eff, cfg.lp_cutoff_hz, DT_CTRL)
        v_eff = rate_limit(st.filter.rl, y, cfg.bounds, DT_CTRL)
        dq_d_filtered = (v_eff - prev) / DT_CTRL

    base = kind.base
    if base == "jp":
        q_d = v_eff
        dq_d = dq_d_filtered if dq_d_filtered is not None else st.dq_d_policy
        return q_d, dq_d

    if base == "jv":
        dq_d = v_eff
    else:
        if base == "cp":
            p_d = v_eff[..., 0:3]
            r6 = v_eff[..., 3:9]
            bad = rot6d_degenerate(r6)
            if np.any(bad):
                # Filtering can average two valid targets into a degenerate
                # vector; hold the measured orientation for those rows.
                r6 = np.where(bad[..., None], rotation_to_rot6d(fb.ee_rot), r6)
            r_d = rot6d_to_rotation(r6)
            rot_err = rotation_log(r_d @ np.swapaxes(fb.ee_rot, -1, -2))
            err = np.concatenate([p_d - fb.ee_pos, rot_err], axis=-1)
            xd = cfg.gains.kp_cart * err
            cap = np.concatenate([np.full(3, model.v_lin_max), np.full(3, model.v_ang_max)])
            xd = np.clip(xd, -cap, cap)
        else:  # cv
            xd = v_eff
        dq_d = ik_velocity(model, fb.q, xd, damping=cfg.ik_damping, k_null=cfg.k_null)

    st.q_d_int = np.clip(st.q_d_int + dq_d * DT_CTRL, model.q_min, model.q_max)
    return st.q_d_int.copy(), dq_d


def compute_torque(cfg: ActionSpaceConfig, a: np.ndarray, fb: Feedback,
                   st: ControllerState, model: RobotModel) -> np.ndarray:
    """Full action-to-torque dispatch for one 120 Hz controller step.

    The caller zeroes ``st.phase`` when a fresh policy action arrives; the
    target update runs only on that first substep, while the impedance
    loop (and the Cartesian feedback loops) rerun every substep against
    live feedback.  Raw torque (jt) bypasses impedance and gravity
    compensation entirely.

    Raises:
        ValueError: on non-finite actions or a wrong trailing dimension.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    m = action_dim(cfg.kind, model)
    if a.shape[-1] != m:
        raise ValueError(f"action dim {a.shape[-1]} != {m} for {cfg.kind.value}")
    if cfg.lo is None:
        cfg.attach(model)

    if cfg.kind.base == "jt":
        if st.phase == 0:
            st.v_d = scale_action(a, cfg.lo, cfg.hi)
        st.phase += 1
        return st.v_d.copy()

    if st.phase == 0:
        _update_target(cfg, a, fb, st)
    st.phase += 1

    q_d, dq_d = base_targets(cfg, fb, st, model)
    tau = jic_torque(cfg.gains, q_d, dq_d, fb) + gravity_torque(model, fb.q)
    return np.clip(tau, -model.tau_max, model.tau_max)
