"""Rotation representations and conversions.

All functions are batched: rotation matrices have shape (..., 3, 3) and
vector quantities (..., 3) or (..., 6).  Conventions used across the
package:

* Euler angles are intrinsic XYZ: ``R = Rx(a) @ Ry(b) @ Rz(c)``.
* The 6D representation is the first two columns of the rotation matrix,
  flattened column-first; recovery uses Gram-Schmidt orthonormalization.
* ``rotation_log`` returns the rotation vector (angle times unit axis).
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric cross-product matrix, batched over leading dims."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=float)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula for a rotation about a fixed unit axis.

    Args:
        axis: unit vectors, shape (..., 3).
        angle: rotation angles in rad, shape broadcastable to axis[..., 0].

    Returns:
        Rotation matrices, shape (..., 3, 3).
    """
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    k = skew(axis)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + s * k + (1.0 - c) * (k @ k)


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Exponential map from rotation vectors (..., 3) to matrices.

    Uses series expansions of sin(t)/t and (1-cos(t))/t^2 near t = 0 so the
    map is smooth through the identity.
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    t2 = theta * theta
    small = theta < 1e-6
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - t2 / 6.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(theta)) / np.where(small, 1.0, t2))
    k = skew(w)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Log map from rotation matrices (..., 3, 3) to rotation vectors.

    Handles the three numerically distinct regimes (small angle, generic,
    angle near pi) with branch-free selection so batched inputs mixing all
    three still work.
    """
    rot = np.asarray(rot, dtype=float)
    trace = np.trace(rot, axis1=-2, axis2=-1)
    # vee(R - R^T) = 2 sin(theta) * axis
    w = np.stack(
        [
            rot[..., 2, 1] - rot[..., 1, 2],
            rot[..., 0, 2] - rot[..., 2, 0],
            rot[..., 1, 0] - rot[..., 0, 1],
        ],
        axis=-1,
    )
    sin_t = 0.5 * np.linalg.norm(w, axis=-1)
    cos_t = np.clip(0.5 * (trace - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_t, cos_t)

    small = theta < 1e-6
    near_pi = theta > np.pi - 1e-4

    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(
            small,
            0.5 + theta * theta / 12.0,
            theta / np.where(sin_t < _EPS, 1.0, 2.0 * sin_t),
        )
    generic = scale[..., None] * w

    # Near pi the skew part vanishes; recover the axis from the diagonal and
    # fix signs from the off-diagonal sums, anchored to the largest component.
    diag = np.stack([rot[..., 0, 0], rot[..., 1, 1], rot[..., 2, 2]], axis=-1)
    axis_sq = np.clip((diag - cos_t[..., None]) / np.where(
        (1.0 - cos_t)[..., None] < _EPS, 1.0, (1.0 - cos_t)[..., None]), 0.0, 1.0)
    axis = np.sqrt(axis_sq)
    off = np.stack(
        [
            rot[..., 2, 1] + rot[..., 1, 2],
            rot[..., 0, 2] + rot[..., 2, 0],
            rot[..., 1, 0] + rot[..., 0, 1],
        ],
        axis=-1,
    )  # off[i] = 2 axis[j] axis[k] (1 - cos t) for {i,j,k} cyclic
    lead = np.argmax(axis, axis=-1).reshape(-1)
    axis_flat = axis.reshape(-1, 3)
    off_flat = off.reshape(-1, 3)
    signs = np.ones_like(axis_flat)
    for i in range(3):
        pick = lead == i
        j, k = (i + 1) % 3, (i + 2) % 3
        signs[pick, j] = np.where(off_flat[pick, k] < 0.0, -1.0, 1.0)
        signs[pick, k] = np.where(off_flat[pick, j] < 0.0, -1.0, 1.0)
    axis_flat = axis_flat * signs
    norm = np.linalg.norm(axis_flat, axis=-1, keepdims=True)
    axis_flat = axis_flat / np.where(norm < _EPS, 1.0, norm)
    # The diagonal only determines the axis up to an overall sign; for
    # theta < pi the skew part still carries it, so align with that (at
    # exactly pi both signs give the same matrix and the default stands).
    dot = np.sum(axis_flat * w.reshape(-1, 3), axis=-1, keepdims=True)
    axis_flat = axis_flat * np.where(dot < 0.0, -1.0, 1.0)
    axis = axis_flat.reshape(axis.shape)
    pi_branch = theta[..., None] * axis

    return np.where(near_pi[..., None], pi_branch, generic)


def rotation_to_rot6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of the rotation matrix, flattened to (..., 6)."""
    rot = np.asarray(rot, dtype=float)
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def rot6d_degenerate(r6: np.ndarray) -> np.ndarray:
    """Boolean mask (...) of 6D vectors Gram-Schmidt cannot orthonormalize.

    True where the first column has (near-)zero norm or the second column
    is (near-)parallel to it.
    """
    r6 = np.asarray(r6, dtype=float)
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    safe1 = np.maximum(n1[..., None], 1e-300)
    b1 = a1 / safe1
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=-1)
    return (n1 < 1e-8) | (n2 < 1e-8)


def rot6d_to_rotation(r6: np.ndarray) -> np.ndarray:
    """Recover a rotation matrix from a (possibly unnormalized) 6D vector.

    Gram-Schmidt on the two stored columns, third column from the cross
    product, so the result is orthonormal with determinant +1 for any input
    whose columns are not parallel.

    Raises:
        ValueError: if a column norm or the residual after projection is
            numerically zero (degenerate input); rot6d_degenerate gives the
            same test as a mask for callers that substitute a fallback.
    """
    r6 = np.asarray(r6, dtype=float)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {r6.shape}")
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-8):
        raise ValueError("degenerate 6D rotation: first column has zero norm")
    b1 = a1 / n1
    a2p = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2p, axis=-1, keepdims=True)
    if np.any(n2 < 1e-8):
        raise ValueError("degenerate 6D rotation: columns are parallel")
    b2 = a2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def euler_to_rotation(euler: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ Euler angles (..., 3) to rotation matrices."""
    euler = np.asarray(euler, dtype=float)
    a, b, c = euler[..., 0], euler[..., 1], euler[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cc, sc = np.cos(c), np.sin(c)
    rot = np.empty(euler.shape[:-1] + (3, 3), dtype=float)
    rot[..., 0, 0] = cb * cc
    rot[..., 0, 1] = -cb * sc
    rot[..., 0, 2] = sb
    rot[..., 1, 0] = ca * sc + sa * sb * cc
    rot[..., 1, 1] = ca * cc - sa * sb * sc
    rot[..., 1, 2] = -sa * cb
    rot[..., 2, 0] = sa * sc - ca * sb * cc
    rot[..., 2, 1] = sa * cc + ca * sb * sc
    rot[..., 2, 2] = ca * cb
    return rot


def rotation_to_euler(rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrices to intrinsic XYZ Euler angles.

    Returns:
        (euler, near_lock): angles with shape (..., 3) and a boolean array
        flagging entries within ~1e-6 of gimbal lock (|cos(pitch)| ~ 0).
        On flagged entries the roll/yaw split is degenerate; the fallback
        sets yaw = 0 and folds the whole spin into roll.
    """
    rot = np.asarray(rot, dtype=float)
    sb = np.clip(rot[..., 0, 2], -1.0, 1.0)
    b = np.arcsin(sb)
    near_lock = np.abs(np.abs(sb) - 1.0) < 1e-6

    a = np.arctan2(-rot[..., 1, 2], rot[..., 2, 2])
    c = np.arctan2(-rot[..., 0, 1], rot[..., 0, 0])
    # Lock fallback: with cos(b) = 0 only (a -/+ c) is observable.
    a_lock = np.arctan2(sb * rot[..., 1, 0], rot[..., 1, 1])
    a = np.where(near_lock, a_lock, a)
    c = np.where(near_lock, 0.0, c)
    return np.stack([a, b, c], axis=-1), near_lock


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3) via its 6D columns."""
    return rot6d_to_rotation(rotation_to_rot6d(rot))
