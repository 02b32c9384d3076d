"""PPO with GAE over the vectorized task environments.

Small Gaussian MLP policies with tanh-squashed actions: the network
predicts a pre-squash mean, a state-independent log-std is learned per
action dimension, and sampled pre-squash actions are stored so the
squash correction stays exact when old actions are re-scored during the
clipped-surrogate epochs.  Everything runs in float64 on CPU; at these
network sizes the simulator dominates the wall clock and the double
precision keeps the numerics testable to tight tolerances.

Episodes in these environments only end by the clock, never in an
absorbing state, so every episode boundary is a truncation and the value
target bootstraps through it with the value of the pre-reset observation.
Without that bootstrap the critic has to predict remaining-horizon return
from observations that carry no clock, and the resulting time-correlated
residual swamps the small per-step reward differences the policy gradient
needs to pick up.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .actions import ActionSpaceConfig, ActionSpaceKind
from .robot import load_robot
from .tasks import TaskConfig, TaskEnv, goal_grid

CHECKPOINT_VERSION = 1
_LOG_STD_MIN, _LOG_STD_MAX = -5.0, 2.0


@dataclass
class PPOConfig:
    """Optimization hyperparameters; defaults are desk-scale, not tuned
    reproductions of any published run."""

    gamma: float = 0.99
    gae_lam: float = 0.95
    clip: float = 0.2
    epochs: int = 20
    minibatch: int = 512
    lr: float = 1e-3
    ent_coef: float = 1e-3
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 64
    rollout: int = 128
    total_steps: int = 2_000_000
    widths: tuple[int, ...] = (64, 64)
    log_std_init: float = -0.4
    log_std_min: float = -1.2   # exploration floor: the action-penalty terms
    log_std_max: float = 2.0    # otherwise collapse the std before the
                                # at-goal bonus is ever discovered
    rew_norm: bool = True        # scale rewards by a running return std (training only)
    eval_every: int = 5          # iterations between deterministic evals
    eval_grid: tuple[int, int, int] = (4, 4, 1)
    target_sr: float | None = None   # early stop once eval SR reaches this

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lam <= 1.0):
            raise ValueError("gamma and gae_lam must lie in [0, 1]")
        if self.clip <= 0:
            raise ValueError("clip range must be positive")
        if self.log_std_min > self.log_std_max:
            raise ValueError("log_std_min must not exceed log_std_max")


def _mlp(in_dim: int, widths: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for w in widths:
        layers += [nn.Linear(prev, w), nn.Tanh()]
        prev = w
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


class PolicyNet(nn.Module):
    """Gaussian policy: MLP mean (pre-squash) + per-dim log-std."""

    def __init__(self, obs_dim: int, act_dim: int, widths: tuple[int, ...] = (64, 64),
                 log_std_init: float = -0.5,
                 log_std_min: float = _LOG_STD_MIN,
                 log_std_max: float = _LOG_STD_MAX):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.widths = tuple(widths)
        self.log_std_min = float(log_std_min)
        self.log_std_max = float(log_std_max)
        self.body = _mlp(obs_dim, self.widths, act_dim)
        init = min(max(float(log_std_init), self.log_std_min), self.log_std_max)
        self.log_std = nn.Parameter(torch.full((act_dim,), init))
        self.double()

    def dist_params(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu = self.body(obs)
        log_std = torch.clamp(self.log_std, self.log_std_min, self.log_std_max)
        return mu, log_std.expand_as(mu)


class ValueNet(nn.Module):
    def __init__(self, obs_dim: int, widths: tuple[int, ...] = (64, 64)):
        super().__init__()
        self.body = _mlp(obs_dim, tuple(widths), 1)
        self.double()

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.body(obs)[..., 0]


def _squash_correction(u: torch.Tensor) -> torch.Tensor:
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for |u| large.
    return 2.0 * (math.log(2.0) - u - nn.functional.softplus(-2.0 * u))


def log_prob_squashed(mu: torch.Tensor, log_std: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Log density of a = tanh(u) for u ~ N(mu, exp(log_std)), summed over dims."""
    var = torch.exp(2.0 * log_std)
    base = -0.5 * (((u - mu) ** 2) / var + 2.0 * log_std + math.log(2.0 * math.pi))
    return (base - _squash_correction(u)).sum(dim=-1)


def sample_action(policy: PolicyNet, obs: torch.Tensor,
                  generator: torch.Generator | None = None
                  ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Draw (a, u, log_prob) with a = tanh(u); u is kept for re-scoring."""
    mu, log_std = policy.dist_params(obs)
    noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    u = mu + noise * torch.exp(log_std)
    a = torch.tanh(u)
    return a, u, log_prob_squashed(mu, log_std, u)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    """Entropy of the pre-squash Gaussian, summed over action dims."""
    return (log_std + 0.5 * math.log(2.0 * math.pi * math.e)).sum(dim=-1)


class ReturnScaler:
    """Running std of the discounted return; divides training rewards.

    Keeps the critic's target scale near unity regardless of the reward
    magnitude.  Only the optimization sees scaled rewards; logged episode
    returns stay raw.
    """

    def __init__(self, gamma: float):
        self.gamma = gamma
        self.ret: np.ndarray | None = None
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    def update(self, rewards: np.ndarray, dones: np.ndarray) -> None:
        if self.ret is None:
            self.ret = np.zeros_like(rewards)
        self.ret = self.ret * self.gamma * (~dones) + rewards
        b_mean = float(self.ret.mean())
        b_var = float(self.ret.var())
        b_count = self.ret.size
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean += delta * b_count / tot
        self.var = (self.var * self.count + b_var * b_count
                    + delta * delta * self.count * b_count / tot) / tot
        self.count = tot

    def scale(self, rewards: np.ndarray) -> np.ndarray:
        return rewards / (math.sqrt(self.var) + 1e-8)

    def state(self) -> dict:
        return {"gamma": self.gamma, "mean": self.mean, "var": self.var,
                "count": self.count,
                "ret": None if self.ret is None else self.ret.tolist()}

    @classmethod
    def from_state(cls, s: dict) -> "ReturnScaler":
        out = cls(s["gamma"])
        out.mean = float(s.get("mean", 0.0))
        out.var = float(s["var"])
        out.count = float(s["count"])
        out.ret = None if s["ret"] is None else np.asarray(s["ret"], dtype=float)
        return out


class ObsNormalizer:
    """Running mean/std over observations; frozen (no updates) at eval."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x: np.ndarray) -> None:
        x = x.reshape(-1, x.shape[-1])
        b_mean = x.mean(axis=0)
        b_var = x.var(axis=0)
        b_count = x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_count
        self.mean = self.mean + delta * (b_count / tot)
        m_a = self.var * self.count
        m_b = b_var * b_count
        self.var = (m_a + m_b + delta * delta * self.count * b_count / tot) / tot
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -10.0, 10.0)

    def state(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "count": self.count}

    @classmethod
    def from_state(cls, s: dict) -> "ObsNormalizer":
        out = cls(len(s["mean"]))
        out.mean = np.asarray(s["mean"], dtype=float)
        out.var = np.asarray(s["var"], dtype=float)
        out.count = float(s["count"])
        return out


@dataclass
class RolloutBuffer:
    """Fixed-size on-policy storage: (rollout, n_envs) leading shape."""

    obs: np.ndarray
    u: np.ndarray          # pre-squash actions
    log_prob: np.ndarray
    reward: np.ndarray
    value: np.ndarray      # (rollout + 1, n_envs): includes bootstrap row
    done: np.ndarray
    trunc_v: np.ndarray    # V(final obs) at clock-truncated steps, else 0

    @classmethod
    def empty(cls, rollout: int, n_envs: int, obs_dim: int, act_dim: int) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((rollout, n_envs, obs_dim)),
            u=np.zeros((rollout, n_envs, act_dim)),
            log_prob=np.zeros((rollout, n_envs)),
            reward=np.zeros((rollout, n_envs)),
            value=np.zeros((rollout + 1, n_envs)),
            done=np.zeros((rollout, n_envs), dtype=bool),
            trunc_v=np.zeros((rollout, n_envs)),
        )


def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
        gamma: float, lam: float,
        trunc_values: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation by reverse recursion.

    Args:
        rewards: (T, ...) per-step rewards.
        values: (T+1, ...) value estimates including the bootstrap row.
        dones: (T, ...) episode-end flags; the advantage recursion resets
            at every done step so credit never leaks across episodes.
        gamma, lam: discount and GAE mixing.
        trunc_values: optional (T, ...) value of the pre-reset observation
            at steps where the episode was cut by the clock, zero
            elsewhere.  A done step with a truncation value bootstraps
            through the cut; without one it is treated as terminal.

    Returns:
        (advantages, returns), both (T, ...); returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1 or dones.shape[0] != t_len:
        raise ValueError("gae length mismatch: need values with one bootstrap row")
    if trunc_values is None:
        trunc_values = np.zeros_like(rewards)
    else:
        trunc_values = np.asarray(trunc_values, dtype=float)
        if trunc_values.shape != rewards.shape:
            raise ValueError("gae length mismatch: trunc_values must match rewards")
    adv = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(t_len - 1, -1, -1):
        alive = ~dones[t]
        v_next = values[t + 1] * alive + trunc_values[t]
        delta = rewards[t] + gamma * v_next - values[t]
        running = delta + gamma * lam * alive * running
        adv[t] = running
    return adv, adv + values[:-1]


def ppo_loss(policy: PolicyNet, value_net: ValueNet, batch: dict[str, torch.Tensor],
             cfg: PPOConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped surrogate + value MSE - entropy bonus.

    The batch carries normalized advantages; raises on a non-finite loss so
    a diverging update aborts loudly rather than poisoning the parameters.
    """
    mu, log_std = policy.dist_params(batch["obs"])
    log_prob = log_prob_squashed(mu, log_std, batch["u"])
    ratio = torch.exp(log_prob - batch["log_prob"])
    adv = batch["adv"]
    surr = torch.minimum(ratio * adv,
                         torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    loss_pi = -surr.mean()
    v = value_net(batch["obs"])
    loss_v = nn.functional.mse_loss(v, batch["ret"])
    entropy = gaussian_entropy(log_std[0]) if log_std.ndim > 1 else gaussian_entropy(log_std)
    loss = loss_pi + cfg.vf_coef * loss_v - cfg.ent_coef * entropy
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite PPO loss; aborting update")
    return loss, {"loss_pi": float(loss_pi.detach()), "loss_v": float(loss_v.detach()),
                  "entropy": float(entropy.detach())}


# ---- Training -------------------------------------------------------------


@dataclass
class TrainResult:
    env_steps: int
    iterations: int
    best_eval_sr: float
    best_eval_er: float
    stopped_early: bool
    checkpoint_best: str
    checkpoint_last: str
    curve: str


def policy_fn_from(policy: PolicyNet, norm: ObsNormalizer):
    """Deterministic numpy-facing policy: tanh of the predicted mean."""

    def act(obs: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.as_tensor(norm.normalize(obs), dtype=torch.float64)
            mu, _ = policy.dist_params(x)
            return torch.tanh(mu).numpy()

    return act


def evaluate_sr(model, task: TaskConfig, space: ActionSpaceConfig, policy_act,
                grid: tuple[int, int, int], seed: int = 0) -> tuple[float, float, float]:
    """Deterministic rollout on the fixed goal grid; returns (SR, ACC, ER).

    One environment per goal, no auto-reset, success-hold early stop.
    """
    goals = goal_grid(task, *grid)
    env = TaskEnv(model, task, space, n_envs=goals.shape[0], seed=seed, auto_reset=False)
    env.reset(seed=seed)
    env.goal[:] = goals[:, : env.goal.shape[1]]
    er = np.zeros(env.n)
    final_dist = np.full(env.n, np.nan)
    final_success = np.zeros(env.n, dtype=bool)
    finished = np.zeros(env.n, dtype=bool)
    obs = env.observe()
    while not np.all(finished):
        obs, r, done, info = env.step(policy_act(obs))
        er += np.where(finished, 0.0, r)
        newly = done & ~finished
        final_dist[newly] = info["dist"][newly]
        final_success[newly] = info["success"][newly]
        finished |= done
    return float(final_success.mean()), float(np.nanmean(final_dist)), float(er.mean())


def save_checkpoint(path: str | Path, policy: PolicyNet, value_net: ValueNet,
                    norm: ObsNormalizer, space_kind: ActionSpaceKind,
                    extra: dict | None = None) -> None:
    blob = {
        "version": CHECKPOINT_VERSION,
        "space": space_kind.label,
        "obs_dim": policy.obs_dim,
        "act_dim": policy.act_dim,
        "widths": list(policy.widths),
        "log_std_bounds": [policy.log_std_min, policy.log_std_max],
        "policy": policy.state_dict(),
        "value": value_net.state_dict(),
        "norm": norm.state(),
    }
    if extra:
        blob.update(extra)
    torch.save(blob, str(path))


def load_checkpoint(path: str | Path) -> dict:
    blob = torch.load(str(path), map_location="cpu", weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    bounds = blob.get("log_std_bounds", [_LOG_STD_MIN, _LOG_STD_MAX])
    policy = PolicyNet(blob["obs_dim"], blob["act_dim"], tuple(blob["widths"]),
                       log_std_min=bounds[0], log_std_max=bounds[1])
    policy.load_state_dict(blob["policy"])
    value_net = ValueNet(blob["obs_dim"], tuple(blob["widths"]))
    value_net.load_state_dict(blob["value"])
    blob["policy_net"] = policy
    blob["value_net"] = value_net
    blob["normalizer"] = ObsNormalizer.from_state(blob["norm"])
    return blob


def train(task: TaskConfig, space_kind: ActionSpaceKind, cfg: PPOConfig, seed: int,
          out_dir: str | Path, resume: bool = True, quiet: bool = False) -> TrainResult:
    """Train one policy; writes curve.csv, checkpoints, and summary.json.

    Re-invoking with ``resume=True`` continues from checkpoint_last.pt
    until cfg.total_steps (a completed run returns immediately).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = load_robot(task.robot)
    space = ActionSpaceConfig.build(space_kind, model)
    env = TaskEnv(model, task, space, n_envs=cfg.n_envs, seed=seed, auto_reset=True)

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed * 7919 + 13)
    policy = PolicyNet(env.obs_dim, env.act_dim, cfg.widths, cfg.log_std_init,
                       log_std_min=cfg.log_std_min, log_std_max=cfg.log_std_max)
    value_net = ValueNet(env.obs_dim, cfg.widths)
    norm = ObsNormalizer(env.obs_dim)
    rew_scale = ReturnScaler(cfg.gamma) if cfg.rew_norm else None
    params = list(policy.parameters()) + list(value_net.parameters())
    optim = torch.optim.Adam(params, lr=cfg.lr)

    last_path = out / "checkpoint_last.pt"
    best_path = out / "checkpoint_best.pt"
    curve_path = out / "curve.csv"
    start_iter = 0
    env_steps = 0
    best_sr, best_er = -1.0, -np.inf
    stopped_early = False
    if resume and last_path.exists():
        blob = load_checkpoint(last_path)
        policy.load_state_dict(blob["policy"])
        value_net.load_state_dict(blob["value"])
        norm = blob["normalizer"]
        optim.load_state_dict(blob["optim"])
        gen.set_state(blob["gen_state"])
        start_iter = blob["iteration"]
        env_steps = blob["env_steps"]
        best_sr, best_er = blob["best_sr"], blob["best_er"]
        if cfg.rew_norm and blob.get("rew_scale") is not None:
            rew_scale = ReturnScaler.from_state(blob["rew_scale"])

    steps_per_iter = cfg.n_envs * cfg.rollout
    n_iters = max(math.ceil(cfg.total_steps / steps_per_iter), 1)
    curve_mode = "a" if start_iter > 0 and curve_path.exists() else "w"
    curve_file = open(curve_path, curve_mode, newline="")
    writer = csv.writer(curve_file)
    if curve_mode == "w":
        writer.writerow(["iteration", "env_steps", "er_mean", "er_p5", "er_p95",
                         "eval_sr", "eval_acc", "eval_er", "loss_pi", "loss_v",
                         "entropy", "seconds"])

    obs = env.reset(seed=seed)
    ep_return = np.zeros(cfg.n_envs)
    t0 = time.perf_counter()
    buf = RolloutBuffer.empty(cfg.rollout, cfg.n_envs, env.obs_dim, env.act_dim)
    it = start_iter
    try:
        for it in range(start_iter, n_iters):
            ers: list[float] = []
            for t in range(cfg.rollout):
                norm.update(obs)
                n_obs = norm.normalize(obs)
                with torch.no_grad():
                    x = torch.as_tensor(n_obs, dtype=torch.float64)
                    a, u, lp = sample_action(policy, x, gen)
                    v = value_net(x)
                buf.obs[t] = n_obs
                buf.u[t] = u.numpy()
                buf.log_prob[t] = lp.numpy()
                buf.value[t] = v.numpy()
                obs, r, done, info = env.step(a.numpy())
                if rew_scale is not None:
                    rew_scale.update(r, done)
                    buf.reward[t] = rew_scale.scale(r)
                else:
                    buf.reward[t] = r
                buf.done[t] = done
                buf.trunc_v[t] = 0.0
                final_obs = info.get("final_obs")
                if final_obs is not None:
                    with torch.no_grad():
                        v_fin = value_net(torch.as_tensor(
                            norm.normalize(final_obs), dtype=torch.float64)).numpy()
                    buf.trunc_v[t][done] = v_fin[done]
                ep_return += r
                if np.any(done):
                    ers.extend(ep_return[done].tolist())
                    ep_return[done] = 0.0
            with torch.no_grad():
                buf.value[-1] = value_net(
                    torch.as_tensor(norm.normalize(obs), dtype=torch.float64)).numpy()
            env_steps += steps_per_iter

            adv, ret = gae(buf.reward, buf.value, buf.done, cfg.gamma, cfg.gae_lam,
                           trunc_values=buf.trunc_v)
            flat = {
                "obs": torch.as_tensor(buf.obs.reshape(-1, env.obs_dim)),
                "u": torch.as_tensor(buf.u.reshape(-1, env.act_dim)),
                "log_prob": torch.as_tensor(buf.log_prob.reshape(-1)),
                "adv_raw": torch.as_tensor(adv.reshape(-1)),
                "ret": torch.as_tensor(ret.reshape(-1)),
            }
            n_samples = flat["obs"].shape[0]
            stats = {"loss_pi": 0.0, "loss_v": 0.0, "entropy": 0.0}
            n_updates = 0
            for _ in range(cfg.epochs):
                araw = flat["adv_raw"]
                flat["adv"] = (araw - araw.mean()) / (araw.std() + 1e-8)
                perm = torch.randperm(n_samples, generator=gen)
                for s in range(0, n_samples, cfg.minibatch):
                    idx = perm[s:s + cfg.minibatch]
                    batch = {k: flat[k][idx] for k in ("obs", "u", "log_prob", "adv", "ret")}
                    loss, parts = ppo_loss(policy, value_net, batch, cfg)
                    optim.zero_grad()
                    loss.backward()
                    nn.utils.clip_grad_norm_(params, cfg.max_grad_norm)
                    optim.step()
                    for k in stats:
                        stats[k] += parts[k]
                    n_updates += 1
            for k in stats:
                stats[k] /= max(n_updates, 1)

            eval_sr = eval_acc = eval_er = float("nan")
            last_it = it == n_iters - 1
            if cfg.eval_every and (it % cfg.eval_every == cfg.eval_every - 1 or last_it):
                eval_sr, eval_acc, eval_er = evaluate_sr(
                    model, task, space, policy_fn_from(policy, norm), cfg.eval_grid)
                if eval_sr > best_sr or (eval_sr == best_sr and eval_er > best_er):
                    best_sr, best_er = eval_sr, eval_er
                    save_checkpoint(best_path, policy, value_net, norm, space_kind,
                                    {"iteration": it + 1, "env_steps": env_steps,
                                     "eval_sr": eval_sr, "eval_er": eval_er})
                if cfg.target_sr is not None and eval_sr >= cfg.target_sr:
                    stopped_early = True

            if ers:
                er_arr = np.asarray(ers)
                er_mean = float(er_arr.mean())
                er_p5 = float(np.percentile(er_arr, 5))
                er_p95 = float(np.percentile(er_arr, 95))
            else:
                er_mean = er_p5 = er_p95 = float("nan")
            writer.writerow([it + 1, env_steps,
                             round(er_mean, 6), round(er_p5, 6), round(er_p95, 6),
                             eval_sr, eval_acc, eval_er,
                             round(stats["loss_pi"], 6), round(stats["loss_v"], 6),
                             round(stats["entropy"], 6),
                             round(time.perf_counter() - t0, 2)])
            curve_file.flush()
            if not quiet:
                print(f"[{task.name}/{space_kind.label}/seed{seed}] iter {it + 1}/{n_iters} "
                      f"steps {env_steps} er {er_mean:.2f} sr {eval_sr}")
            save_checkpoint(last_path, policy, value_net, norm, space_kind,
                            {"iteration": it + 1, "env_steps": env_steps,
                             "best_sr": best_sr, "best_er": best_er,
                             "optim": optim.state_dict(), "gen_state": gen.get_state(),
                             "rew_scale": None if rew_scale is None else rew_scale.state()})
            if stopped_early:
                break
    finally:
        curve_file.close()

    if not best_path.exists():  # no eval fired (tiny runs): best = last
        save_checkpoint(best_path, policy, value_net, norm, space_kind,
                        {"iteration": it + 1, "env_steps": env_steps,
                         "eval_sr": best_sr, "eval_er": best_er})
    result = TrainResult(
        env_steps=env_steps, iterations=it + 1,
        best_eval_sr=best_sr, best_eval_er=best_er, stopped_early=stopped_early,
        checkpoint_best=str(best_path), checkpoint_last=str(last_path),
        curve=str(curve_path),
    )
    (out / "summary.json").write_text(json.dumps(asdict(result), indent=2))
    return result
