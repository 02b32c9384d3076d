"""Robot arm description, kinematics, and differential inverse kinematics.

A robot is a serial chain of revolute joints.  Joint i sits at a fixed
transform (``origin_pos``, ``origin_rot``) relative to the previous joint
frame and rotates about a fixed unit ``axis`` expressed in its own frame.
The end effector is a fixed tool transform after the last joint.

Every kinematic function is batched over leading dimensions of ``q``:
``q`` with shape (..., n) yields poses with position (..., 3) and rotation
(..., 3, 3).  This is what makes vectorized environment stepping cheap.

The on-disk format is JSON with fields mirroring :class:`RobotModel`; see
``load_robot`` for the schema and validation rules.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .rotations import axis_angle_rotation, euler_to_rotation


@dataclass
class Pose:
    """Position (..., 3) and rotation matrix (..., 3, 3), possibly batched."""

    position: np.ndarray
    rotation: np.ndarray


@dataclass
class JointState:
    """Joint positions and velocities, shape (..., n)."""

    q: np.ndarray
    dq: np.ndarray


@dataclass
class RobotModel:
    """Fixed description of a serial arm; arrays are per joint unless noted.

    The Cartesian blocks (workspace box, velocity and acceleration bounds)
    drive action scaling and delta-step defaults for the Cartesian action
    spaces; like the joint bounds they are configuration, not measurements.
    """

    name: str
    origin_pos: np.ndarray        # (n, 3) fixed offset from parent frame
    origin_rot: np.ndarray        # (n, 3, 3) fixed rotation from parent frame
    axis: np.ndarray              # (n, 3) unit rotation axis in joint frame
    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    ddq_max: np.ndarray
    dddq_max: np.ndarray
    tau_max: np.ndarray
    q_def: np.ndarray             # neutral posture (rad)
    mass: np.ndarray              # (n,) link masses (kg)
    com: np.ndarray               # (n, 3) link COM in joint frame
    inertia: np.ndarray           # (n, 3, 3) link inertia about COM, joint frame
    ee_offset_pos: np.ndarray     # (3,) tool offset from last joint frame
    ee_offset_rot: np.ndarray     # (3, 3)
    armature: np.ndarray = None   # (n,) reflected rotor inertia per joint (kg m^2)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    ws_min: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.0, 0.0]))
    ws_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))
    v_lin_max: float = 1.0        # Cartesian linear velocity bound (m/s)
    v_ang_max: float = 2.5        # Cartesian angular velocity bound (rad/s)
    a_lin_max: float = 5.0        # Cartesian linear acceleration bound (m/s^2)
    a_ang_max: float = 12.0       # Cartesian angular acceleration bound (rad/s^2)

    def __post_init__(self) -> None:
        if self.armature is None:
            self.armature = np.zeros(self.axis.shape[0])

    @property
    def n_joints(self) -> int:
        return self.axis.shape[0]


def _as_rotation(entry) -> np.ndarray:
    """Interpret a config rotation: rpy 3-list (intrinsic XYZ) or 3x3 rows."""
    arr = np.asarray(entry, dtype=float)
    if arr.shape == (3,):
        return euler_to_rotation(arr)
    if arr.shape == (3, 3):
        return arr
    raise ValueError(f"rotation entry must be rpy (3,) or matrix (3, 3), got {arr.shape}")


def _as_inertia(entry) -> np.ndarray:
    arr = np.asarray(entry, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ValueError(f"inertia entry must be principal (3,) or matrix (3, 3), got {arr.shape}")


def robot_from_dict(data: dict) -> RobotModel:
    """Build and validate a :class:`RobotModel` from a parsed config dict.

    Raises:
        ValueError: on malformed or physically inconsistent entries
            (non-unit axis fixed by normalization is allowed; zero axis,
            negative mass, non-SPD inertia, or q_min >= q_max are not).
    """
    joints = data.get("joints")
    if not joints:
        raise ValueError("robot config has no joints")
    n = len(joints)

    def per_joint(key, default=None):
        vals = []
        for j in joints:
            if key not in j:
                if default is None:
                    raise ValueError(f"joint missing required field '{key}'")
                vals.append(default)
            else:
                vals.append(j[key])
        return vals

    axis = np.asarray(per_joint("axis"), dtype=float)
    norms = np.linalg.norm(axis, axis=-1)
    if np.any(norms < 1e-9):
        raise ValueError("joint axis must be nonzero")
    axis = axis / norms[:, None]

    mass = np.asarray(per_joint("mass"), dtype=float)
    if np.any(mass <= 0.0):
        raise ValueError("link mass must be positive")

    inertia = np.stack([_as_inertia(j["inertia"]) for j in joints])
    for i in range(n):
        sym = 0.5 * (inertia[i] + inertia[i].T)
        if np.any(np.linalg.eigvalsh(sym) <= 0.0):
            raise ValueError(f"link {i} inertia is not symmetric positive definite")
        inertia[i] = sym

    q_min = np.asarray(per_joint("q_min"), dtype=float)
    q_max = np.asarray(per_joint("q_max"), dtype=float)
    if np.any(q_min >= q_max):
        raise ValueError("q_min must be strictly below q_max")

    for key in ("dq_max", "ddq_max", "dddq_max", "tau_max"):
        if np.any(np.asarray(per_joint(key), dtype=float) <= 0.0):
            raise ValueError(f"{key} must be positive")

    q_def = np.asarray(per_joint("q_def", 0.0), dtype=float)
    if np.any(q_def < q_min) or np.any(q_def > q_max):
        raise ValueError("q_def outside joint limits")

    armature = np.asarray(per_joint("armature", 0.0), dtype=float)
    if np.any(armature < 0.0):
        raise ValueError("armature inertia must be nonnegative")

    ws = data.get("workspace", {})
    cart = data.get("cartesian", {})
    model = RobotModel(
        name=data.get("name", "robot"),
        origin_pos=np.asarray(per_joint("origin_xyz"), dtype=float),
        origin_rot=np.stack([_as_rotation(j.get("origin_rpy", [0.0, 0.0, 0.0])) for j in joints]),
        axis=axis,
        q_min=q_min,
        q_max=q_max,
        dq_max=np.asarray(per_joint("dq_max"), dtype=float),
        ddq_max=np.asarray(per_joint("ddq_max"), dtype=float),
        dddq_max=np.asarray(per_joint("dddq_max"), dtype=float),
        tau_max=np.asarray(per_joint("tau_max"), dtype=float),
        q_def=q_def,
        mass=mass,
        com=np.asarray(per_joint("com"), dtype=float),
        inertia=inertia,
        armature=armature,
        ee_offset_pos=np.asarray(data.get("ee_offset_xyz", [0.0, 0.0, 0.0]), dtype=float),
        ee_offset_rot=_as_rotation(data.get("ee_offset_rpy", [0.0, 0.0, 0.0])),
        gravity=np.asarray(data.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
        ws_min=np.asarray(ws.get("min", [-1.0, -1.0, 0.0]), dtype=float),
        ws_max=np.asarray(ws.get("max", [1.0, 1.0, 1.0]), dtype=float),
        v_lin_max=float(cart.get("v_lin_max", 1.0)),
        v_ang_max=float(cart.get("v_ang_max", 2.5)),
        a_lin_max=float(cart.get("a_lin_max", 5.0)),
        a_ang_max=float(cart.get("a_ang_max", 12.0)),
    )
    if np.any(model.ws_min > model.ws_max):
        raise ValueError("workspace min must not exceed max")
    return model


def load_robot(name_or_path: str | Path) -> RobotModel:
    """Load a robot description from a packaged name or a JSON file path.

    Packaged models are looked up first ("planar3", "spatial7"); anything
    else is treated as a filesystem path.
    """
    name = str(name_or_path)
    if "/" not in name and not name.endswith(".json"):
        ref = resources.files("aspace").joinpath(f"data/{name}.json")
        if ref.is_file():
            return robot_from_dict(json.loads(ref.read_text()))
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(f"unknown robot '{name_or_path}' (not packaged, not a file)")
    return robot_from_dict(json.loads(path.read_text()))


def chain_frames(model: RobotModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World pose of every joint frame along the chain.

    Args:
        model: the arm.
        q: joint positions, shape (..., n).

    Returns:
        (p, rot, z): joint origins (..., n, 3), joint frame rotations
        (..., n, 3, 3) including the joint's own rotation, and world joint
        axes (..., n, 3).
    """
    q = np.asarray(q, dtype=float)
    n = model.n_joints
    if q.shape[-1] != n:
        raise ValueError(f"expected q with trailing dim {n}, got {q.shape}")
    batch = q.shape[:-1]
    p = np.empty(batch + (n, 3))
    rot = np.empty(batch + (n, 3, 3))
    z = np.empty(batch + (n, 3))
    p_prev = np.zeros(batch + (3,))
    r_prev = np.broadcast_to(np.eye(3), batch + (3, 3))
    for i in range(n):
        p_i = p_prev + (r_prev @ model.origin_pos[i])
        r_pre = r_prev @ model.origin_rot[i]
        z_i = r_pre @ model.axis[i]
        r_i = r_pre @ axis_angle_rotation(model.axis[i], q[..., i])
        p[..., i, :] = p_i
        rot[..., i, :, :] = r_i
        z[..., i, :] = z_i
        p_prev, r_prev = p_i, r_i
    return p, rot, z


def forward_kinematics(model: RobotModel, q: np.ndarray) -> Pose:
    """End-effector pose for joint positions q (..., n)."""
    p, rot, _ = chain_frames(model, q)
    r_last = rot[..., -1, :, :]
    ee_p = p[..., -1, :] + (r_last @ model.ee_offset_pos)
    ee_r = r_last @ model.ee_offset_rot
    return Pose(position=ee_p, rotation=ee_r)


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (..., 6, n): rows 0:3 linear, rows 3:6 angular."""
    p, rot, z = chain_frames(model, q)
    ee_p = p[..., -1, :] + (rot[..., -1, :, :] @ model.ee_offset_pos)
    arm = ee_p[..., None, :] - p
    jv = np.cross(z, arm)                      # (..., n, 3)
    jac = np.concatenate([jv, z], axis=-1)     # (..., n, 6)
    return np.swapaxes(jac, -1, -2)


def ee_twist(model: RobotModel, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """End-effector twist (..., 6) = jacobian @ dq."""
    jac = jacobian(model, q)
    return np.einsum("...ij,...j->...i", jac, np.asarray(dq, dtype=float))


def ik_velocity(
    model: RobotModel,
    q: np.ndarray,
    xdot: np.ndarray,
    damping: float = 1e-2,
    k_null: float = 1.0,
) -> np.ndarray:
    """Damped-least-squares differential IK with null-space posture pull.

    Solves dq = J^T (J J^T + damping^2 I)^-1 xdot, adds the null-space term
    (I - J+ J) k_null (q_def - q), and clips to the joint velocity bounds.
    The damping keeps the map bounded through singularities:
    ||dq_task|| <= ||xdot|| / (2 * damping).

    Args:
        model: the arm.
        q: joint positions (..., n).
        xdot: desired end-effector twist (..., 6).
        damping: singular-value damping (must be > 0).
        k_null: gain on the neutral-posture null-space objective (1/s).

    Returns:
        Joint velocity command (..., n), clipped to +-dq_max.
    """
    if damping <= 0.0:
        raise ValueError("damping must be positive")
    q = np.asarray(q, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    jac = jacobian(model, q)
    jjt = jac @ np.swapaxes(jac, -1, -2)
    jjt = jjt + (damping * damping) * np.eye(6)
    # J+ = J^T (J J^T + d^2 I)^-1, batched
    sol = np.linalg.solve(jjt, xdot[..., None])[..., 0]
    dq_task = np.einsum("...ji,...j->...i", jac, sol)
    jp = np.swapaxes(jac, -1, -2) @ np.linalg.inv(jjt)
    null_proj = np.eye(model.n_joints) - jp @ jac
    posture = k_null * (model.q_def - q)
    dq_null = np.einsum("...ij,...j->...i", null_proj, posture)
    return np.clip(dq_task + dq_null, -model.dq_max, model.dq_max)
