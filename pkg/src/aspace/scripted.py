"""Scripted exploratory policies for gap measurement without training.

Transfer metrics compare action spaces on matched action streams: the same
seeded excitation signal drives every space of equal action dimension, so a
gap between two spaces reflects the target semantics, not the policy.
"""

from __future__ import annotations

import numpy as np

from .actions import ActionSpaceKind, action_dim
from .dynamics import gravity_torque
from .robot import RobotModel
from .tasks import DT_POLICY

SLOW_HZ = (0.10, 0.30)
FAST_HZ = (0.70, 1.30)
SLOW_AMP = 0.45
FAST_AMP = 0.35


def sinusoid_actions(m: int, t_len: int, seed: int) -> np.ndarray:
    """Two-tone sinusoid excitation, (t_len, m), bounded by |a| <= 0.8.

    Each dimension gets independent frequencies and phases from the seed;
    the slow tone sweeps the workspace while the fast tone adds texture
    that separates sluggish target semantics from responsive ones.
    """
    if m < 1 or t_len < 1:
        raise ValueError("need m >= 1 and t_len >= 1")
    rng = np.random.default_rng(seed)
    f_slow = rng.uniform(*SLOW_HZ, size=m)
    f_fast = rng.uniform(*FAST_HZ, size=m)
    ph_slow = rng.uniform(0.0, 2.0 * np.pi, size=m)
    ph_fast = rng.uniform(0.0, 2.0 * np.pi, size=m)
    t = np.arange(t_len)[:, None] * DT_POLICY
    a = (SLOW_AMP * np.sin(2.0 * np.pi * f_slow * t + ph_slow)
         + FAST_AMP * np.sin(2.0 * np.pi * f_fast * t + ph_fast))
    return a


def scripted_actions(kind: ActionSpaceKind | str, model: RobotModel,
                     t_len: int, seed: int) -> np.ndarray:
    """Excitation stream sized for the given space, (t_len, m).

    Spaces sharing an action dimension receive the identical stream for a
    given seed.  The torque space adds a gravity feedforward at the neutral
    posture so the excitation explores around a supported arm instead of a
    falling one.
    """
    if isinstance(kind, str):
        kind = ActionSpaceKind.from_label(kind)
    m = action_dim(kind, model)
    a = sinusoid_actions(m, t_len, seed)
    if kind.base == "jt":
        bias = gravity_torque(model, model.q_def) / model.tau_max
        a = a + bias
    return np.clip(a, -1.0, 1.0)


def scripted_policy(kind: ActionSpaceKind | str, model: RobotModel,
                    t_len: int, seed: int):
    """Closed signature wrapper: ``f(obs) -> actions`` advancing one policy
    step per call and holding the last value once the script runs out.
    """
    stream = scripted_actions(kind, model, t_len, seed)
    counter = {"t": 0}

    def act(obs: np.ndarray) -> np.ndarray:
        i = min(counter["t"], len(stream) - 1)
        counter["t"] += 1
        return np.broadcast_to(stream[i], (obs.shape[0], stream.shape[1]))

    return act
