"""Deployment-side target filtering and motion-constraint checking.

Real torque-controlled arms sit behind a safety interface that smooths and
rate-limits incoming control targets before the impedance loop sees them.
This module reproduces that interface at the 120 Hz controller rate:

* ``low_pass``: first-order exponential smoother with unit DC gain.
* ``rate_limit``: sequential clamp of implied velocity, acceleration, and
  jerk (finite differences against the emitted history), a braking
  envelope so value bounds are approached no faster than the acceleration
  bound can stop, and a final value clamp.
* ``check_constraints``: backward finite-difference estimates of velocity,
  acceleration, and jerk checked against per-joint bounds.

Filters act on control targets during evaluation and replay only.  They
are never enabled during training: filter memory would make the policy's
world non-Markov.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DT_CTRL = 1.0 / 120.0
# Relative slack on bound comparisons so a clamped stream that rides a bound
# exactly is not flagged for roundoff.
_REL_TOL = 1e-9


@dataclass
class ConstraintSet:
    """Per-joint velocity, acceleration, and jerk bounds (120 Hz checks)."""

    dq_max: np.ndarray
    ddq_max: np.ndarray
    dddq_max: np.ndarray

    @classmethod
    def from_model(cls, model) -> "ConstraintSet":
        return cls(
            dq_max=np.asarray(model.dq_max, dtype=float),
            ddq_max=np.asarray(model.ddq_max, dtype=float),
            dddq_max=np.asarray(model.dddq_max, dtype=float),
        )


@dataclass
class RateBounds:
    """Value box plus per-order rate bounds for a target stream.

    ``rates[k]`` bounds the magnitude of the (k+1)-th finite difference of
    the stream divided by dt^(k+1).  The chain may be shorter than three
    for streams that are themselves derivatives (velocity targets).
    """

    lo: np.ndarray
    hi: np.ndarray
    rates: tuple[np.ndarray, ...]


@dataclass
class LowPassState:
    y: np.ndarray


@dataclass
class RateLimitState:
    x: np.ndarray
    derivs: list[np.ndarray] = field(default_factory=list)


@dataclass
class FilterState:
    """Combined per-stream filter memory, reset to feedback at episode start."""

    lp: LowPassState
    rl: RateLimitState

    @classmethod
    def init(cls, x0: np.ndarray, n_rates: int) -> "FilterState":
        x0 = np.array(x0, dtype=float)
        derivs = [np.zeros_like(x0) for _ in range(max(n_rates - 1, 0))]
        return cls(lp=LowPassState(y=x0.copy()), rl=RateLimitState(x=x0.copy(), derivs=derivs))


def low_pass(state: LowPassState, x: np.ndarray, cutoff_hz: float = 5.0, dt: float = DT_CTRL) -> np.ndarray:
    """First-order low-pass step: y += alpha (x - y), alpha = dt/(tau + dt).

    DC gain is exactly one, so a constant input is reproduced once the
    state converges.  The state is updated in place and the new output
    returned.
    """
    if cutoff_hz <= 0.0:
        raise ValueError("cutoff frequency must be positive")
    tau = 1.0 / (2.0 * np.pi * cutoff_hz)
    alpha = dt / (tau + dt)
    state.y = state.y + alpha * (np.asarray(x, dtype=float) - state.y)
    return state.y.copy()


def _brake_envelope(gap: np.ndarray, accel: np.ndarray, dt: float) -> np.ndarray:
    # Largest speed from which one dt of travel plus a constant-deceleration
    # stop still fits inside gap: v dt + v^2/(2 a) <= gap.
    gap = np.maximum(gap, 0.0)
    return accel * (-dt + np.sqrt(dt * dt + 2.0 * gap / np.maximum(accel, 1e-12)))


def rate_limit(state: RateLimitState, target: np.ndarray, bounds: RateBounds, dt: float = DT_CTRL) -> np.ndarray:
    """Clamp one target sample so the emitted stream obeys its rate chain.

    The clamp order is velocity, acceleration, jerk, then value bounds.
    The velocity clamp includes a braking envelope: approaching a value
    bound, speed is capped so the acceleration bound can still stop the
    stream inside it.  The final value clamp is applied only when it does
    not break the already-satisfied derivative windows, which cannot occur
    when bounds satisfy rates[k+1] * dt >= 2 * rates[k] (true for the
    shipped robots); the derivative chain always wins otherwise.

    The state must have been initialized from feedback at episode start.
    Output string derivatives are stored for the next call.
    """
    x_prev = state.x
    target = np.asarray(target, dtype=float)
    n_levels = len(bounds.rates)

    v = (target - x_prev) / dt
    if n_levels >= 1:
        v = np.clip(v, -bounds.rates[0], bounds.rates[0])
        if n_levels >= 2:
            env_hi = _brake_envelope(bounds.hi - x_prev, bounds.rates[1], dt)
            env_lo = _brake_envelope(x_prev - bounds.lo, bounds.rates[1], dt)
            v = np.clip(v, -env_lo, env_hi)
    if n_levels >= 2:
        v_prev = state.derivs[0]
        a = (v - v_prev) / dt
        a = np.clip(a, -bounds.rates[1], bounds.rates[1])
        if n_levels >= 3:
            a_prev = state.derivs[1]
            a = np.clip(a, a_prev - bounds.rates[2] * dt, a_prev + bounds.rates[2] * dt)
        v = v_prev + a * dt
    x = x_prev + v * dt

    # Value clamp, skipped where it would break the derivative windows.
    x_cl = np.clip(x, bounds.lo, bounds.hi)
    ok = np.ones(x.shape, dtype=bool)
    v_cl = (x_cl - x_prev) / dt
    if n_levels >= 1:
        ok &= np.abs(v_cl) <= bounds.rates[0] * (1.0 + _REL_TOL)
    if n_levels >= 2:
        a_cl = (v_cl - state.derivs[0]) / dt
        ok &= np.abs(a_cl) <= bounds.rates[1] * (1.0 + _REL_TOL)
        if n_levels >= 3:
            j_cl = (a_cl - state.derivs[1]) / dt
            ok &= np.abs(j_cl) <= bounds.rates[2] * (1.0 + _REL_TOL)
    x = np.where(ok, x_cl, x)

    new_derivs = []
    d_prev = x_prev
    fd = (x - d_prev) / dt
    if state.derivs:
        new_derivs.append(fd)
        for k in range(1, len(state.derivs)):
            fd = (fd - state.derivs[k - 1]) / dt
            new_derivs.append(fd)
    state.x = x
    state.derivs = new_derivs
    return x.copy()


def check_constraints(samples: np.ndarray, limits: ConstraintSet, dt: float = DT_CTRL) -> np.ndarray:
    """Per-step constraint verdicts for a joint-position stream.

    Args:
        samples: positions with shape (..., T, n); row t is checked with
            backward differences over rows t-3..t.  Rows without enough
            history count as satisfied (warm-up).
        limits: the per-joint bounds.
        dt: sample period (the 120 Hz controller period by default).

    Returns:
        Boolean flags (..., T, 3): velocity, acceleration, jerk violation
        per step.  A bound is violated when the finite-difference estimate
        exceeds it beyond a 1e-9 relative slack.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim < 2:
        raise ValueError("samples must have shape (..., T, n)")
    t_len = x.shape[-2]
    flags = np.zeros(x.shape[:-2] + (t_len, 3), dtype=bool)

    def exceeds(est, bound):
        return np.any(np.abs(est) > bound * (1.0 + _REL_TOL), axis=-1)

    if t_len >= 2:
        d1 = (x[..., 1:, :] - x[..., :-1, :]) / dt
        flags[..., 1:, 0] = exceeds(d1, limits.dq_max)
    if t_len >= 3:
        d2 = (x[..., 2:, :] - 2.0 * x[..., 1:-1, :] + x[..., :-2, :]) / (dt * dt)
        flags[..., 2:, 1] = exceeds(d2, limits.ddq_max)
    if t_len >= 4:
        d3 = (
            x[..., 3:, :] - 3.0 * x[..., 2:-1, :] + 3.0 * x[..., 1:-2, :] - x[..., :-3, :]
        ) / (dt * dt * dt)
        flags[..., 3:, 2] = exceeds(d3, limits.dddq_max)
    return flags
