"""Policy optimization: GAE oracle, squashed densities, loss gradients."""

import math

import numpy as np
import pytest
import torch

from aspace.actions import ActionSpaceConfig, ActionSpaceKind
from aspace.ppo import (
    ObsNormalizer,
    PolicyNet,
    PPOConfig,
    ReturnScaler,
    ValueNet,
    evaluate_sr,
    gae,
    gaussian_entropy,
    load_checkpoint,
    log_prob_squashed,
    policy_fn_from,
    ppo_loss,
    sample_action,
    save_checkpoint,
    train,
)
from aspace.robot import load_robot
from aspace.tasks import load_task


def gae_oracle(r, v, dones, gamma, lam, trunc=None):
    """Direct forward-sum advantage: per start step, accumulate discounted
    deltas until the episode ends."""
    t_len = r.shape[0]
    trunc = np.zeros_like(r) if trunc is None else trunc
    adv = np.zeros_like(r)
    for col in range(r.shape[1]):
        for t in range(t_len):
            acc, coef = 0.0, 1.0
            for k in range(t, t_len):
                alive = not dones[k, col]
                v_next = v[k + 1, col] * alive + trunc[k, col]
                delta = r[k, col] + gamma * v_next - v[k, col]
                acc += coef * delta
                if dones[k, col]:
                    break
                coef *= gamma * lam
            adv[t, col] = acc
    return adv


class TestGAE:
    def test_matches_forward_sum_with_cuts_and_bootstraps(self):
        rng = np.random.default_rng(0)
        t_len, n = 40, 3
        r = rng.normal(size=(t_len, n))
        v = rng.normal(size=(t_len + 1, n))
        dones = rng.random((t_len, n)) < 0.15
        trunc = np.where(dones, rng.normal(size=(t_len, n)), 0.0)
        adv, ret = gae(r, v, dones, 0.99, 0.95, trunc_values=trunc)
        want = gae_oracle(r, v, dones, 0.99, 0.95, trunc)
        np.testing.assert_allclose(adv, want, atol=1e-12)
        np.testing.assert_allclose(ret, adv + v[:-1], atol=0)

    def test_no_dones_textbook_recursion(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=(20, 2))
        v = rng.normal(size=(21, 2))
        dones = np.zeros((20, 2), dtype=bool)
        adv, _ = gae(r, v, dones, 0.9, 0.8)
        want = gae_oracle(r, v, dones, 0.9, 0.8)
        np.testing.assert_allclose(adv, want, atol=1e-12)

    def test_terminal_cut_vs_bootstrapped_cut(self):
        # A one-step episode: terminal ignores V(s'), a clock cut keeps it.
        r = np.array([[2.0]])
        v = np.array([[0.5], [9.0]])  # bootstrap row must be masked by done
        dones = np.array([[True]])
        adv_term, _ = gae(r, v, dones, 0.99, 0.95)
        assert adv_term[0, 0] == pytest.approx(2.0 - 0.5, abs=1e-15)
        trunc = np.array([[3.0]])
        adv_cut, _ = gae(r, v, dones, 0.99, 0.95, trunc_values=trunc)
        assert adv_cut[0, 0] == pytest.approx(2.0 + 0.99 * 3.0 - 0.5, abs=1e-15)

    def test_credit_does_not_leak_across_episodes(self):
        rng = np.random.default_rng(2)
        r = rng.normal(size=(30, 1))
        v = rng.normal(size=(31, 1))
        dones = np.zeros((30, 1), dtype=bool)
        dones[14] = True
        adv_a, _ = gae(r, v, dones, 0.99, 0.95)
        r2 = r.copy()
        r2[20] += 100.0  # later episode only
        adv_b, _ = gae(r2, v, dones, 0.99, 0.95)
        np.testing.assert_allclose(adv_a[:15], adv_b[:15], atol=0)
        assert abs(adv_a[20, 0] - adv_b[20, 0]) > 50.0

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="bootstrap row"):
            gae(np.zeros((5, 1)), np.zeros((5, 1)), np.zeros((5, 1), dtype=bool),
                0.99, 0.95)
        with pytest.raises(ValueError, match="trunc_values"):
            gae(np.zeros((5, 1)), np.zeros((6, 1)), np.zeros((5, 1), dtype=bool),
                0.99, 0.95, trunc_values=np.zeros((4, 1)))


class TestSquashedDensity:
    def test_matches_change_of_variables(self):
        rng = torch.Generator().manual_seed(0)
        mu = torch.randn(16, 4, generator=rng, dtype=torch.float64)
        log_std = torch.randn(16, 4, generator=rng, dtype=torch.float64) * 0.3
        u = torch.randn(16, 4, generator=rng, dtype=torch.float64) * 2.0
        got = log_prob_squashed(mu, log_std, u)
        base = torch.distributions.Normal(mu, torch.exp(log_std)).log_prob(u)
        jac = torch.log1p(-torch.tanh(u) ** 2)
        want = (base - jac).sum(dim=-1)
        torch.testing.assert_close(got, want, atol=1e-10, rtol=0)

    def test_stable_for_extreme_presquash(self):
        # log1p(-tanh(u)^2) underflows around |u| = 20; the softplus form
        # must keep returning the analytic value -2|u| + log 4 there.
        mu = torch.zeros(1, 1, dtype=torch.float64)
        log_std = torch.zeros(1, 1, dtype=torch.float64)
        u = torch.tensor([[30.0]], dtype=torch.float64)
        got = log_prob_squashed(mu, log_std, u)
        base = -0.5 * (30.0**2 + math.log(2 * math.pi))
        want = base - (math.log(4.0) - 2.0 * 30.0)
        assert torch.isfinite(got).all()
        assert got.item() == pytest.approx(want, rel=1e-12)

    def test_sample_action_consistency(self):
        policy = PolicyNet(6, 3)
        obs = torch.randn(8, 6, dtype=torch.float64)
        g1 = torch.Generator().manual_seed(42)
        g2 = torch.Generator().manual_seed(42)
        a1, u1, lp1 = sample_action(policy, obs, g1)
        a2, u2, lp2 = sample_action(policy, obs, g2)
        torch.testing.assert_close(a1, a2, atol=0, rtol=0)
        torch.testing.assert_close(a1, torch.tanh(u1), atol=0, rtol=0)
        mu, log_std = policy.dist_params(obs)
        torch.testing.assert_close(lp1, log_prob_squashed(mu, log_std, u1),
                                   atol=0, rtol=0)
        assert torch.all(a1.abs() < 1.0)

    def test_entropy_matches_normal(self):
        log_std = torch.tensor([0.1, -0.4, 0.7], dtype=torch.float64)
        want = torch.distributions.Normal(
            torch.zeros(3, dtype=torch.float64), torch.exp(log_std)
        ).entropy().sum()
        torch.testing.assert_close(gaussian_entropy(log_std), want,
                                   atol=1e-12, rtol=0)


class TestPolicyNet:
    def test_log_std_clamped_to_bounds(self):
        policy = PolicyNet(4, 2, log_std_init=-9.0, log_std_min=-1.5,
                           log_std_max=0.5)
        _, log_std = policy.dist_params(torch.zeros(1, 4, dtype=torch.float64))
        assert torch.all(log_std >= -1.5)
        with torch.no_grad():
            policy.log_std.fill_(10.0)
        _, log_std = policy.dist_params(torch.zeros(1, 4, dtype=torch.float64))
        assert torch.all(log_std <= 0.5)

    def test_config_rejects_inverted_bounds(self):
        with pytest.raises(ValueError, match="log_std_min"):
            PPOConfig(log_std_min=1.0, log_std_max=0.0)
        with pytest.raises(ValueError, match="clip"):
            PPOConfig(clip=0.0)
        with pytest.raises(ValueError, match="gamma"):
            PPOConfig(gamma=1.2)


def make_batch(policy, value_net, n=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    obs = torch.randn(n, policy.obs_dim, generator=gen, dtype=torch.float64)
    with torch.no_grad():
        a, u, lp = sample_action(policy, obs, gen)
    adv = torch.randn(n, generator=gen, dtype=torch.float64)
    adv = (adv - adv.mean()) / adv.std()
    ret = torch.randn(n, generator=gen, dtype=torch.float64)
    return {"obs": obs, "u": u, "log_prob": lp, "adv": adv, "ret": ret}


class TestPPOLoss:
    def test_unit_ratio_reduces_to_mean_advantage(self):
        policy = PolicyNet(5, 2)
        value_net = ValueNet(5)
        batch = make_batch(policy, value_net)
        cfg = PPOConfig()
        _, parts = ppo_loss(policy, value_net, batch, cfg)
        assert parts["loss_pi"] == pytest.approx(-batch["adv"].mean().item(),
                                                 abs=1e-12)

    def test_clip_caps_positive_advantage_gain(self):
        policy = PolicyNet(5, 2)
        value_net = ValueNet(5)
        batch = make_batch(policy, value_net)
        cfg = PPOConfig(clip=0.2)
        # Shift stored log-probs down: ratio = e^2 for every sample.
        shifted = dict(batch, log_prob=batch["log_prob"] - 2.0)
        _, parts = ppo_loss(policy, value_net, shifted, cfg)
        adv = batch["adv"]
        want = -torch.minimum(math.exp(2.0) * adv, torch.where(
            adv > 0, 1.2 * adv, 0.8 * adv)).mean().item()
        assert parts["loss_pi"] == pytest.approx(want, abs=1e-12)

    def test_nonfinite_loss_aborts(self):
        policy = PolicyNet(5, 2)
        value_net = ValueNet(5)
        batch = make_batch(policy, value_net)
        batch["adv"] = batch["adv"] * float("inf")
        with pytest.raises(FloatingPointError, match="non-finite"):
            ppo_loss(policy, value_net, batch, PPOConfig())

    def test_gradient_matches_finite_differences(self):
        # Central differences on randomly probed weights across both nets.
        torch.manual_seed(3)
        policy = PolicyNet(5, 2, widths=(16,))
        value_net = ValueNet(5, widths=(16,))
        batch = make_batch(policy, value_net, n=32, seed=7)
        cfg = PPOConfig()
        params = list(policy.parameters()) + list(value_net.parameters())

        loss, _ = ppo_loss(policy, value_net, batch, cfg)
        for p in params:
            p.grad = None
        loss.backward()

        rng = np.random.default_rng(11)
        h = 1e-6
        checked = 0
        for p in params:
            flat = p.detach().reshape(-1)
            grad = p.grad.reshape(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()),
                                  replace=False):
                with torch.no_grad():
                    orig = flat[idx].item()
                    flat[idx] = orig + h
                    lp, _ = ppo_loss(policy, value_net, batch, cfg)
                    flat[idx] = orig - h
                    lm, _ = ppo_loss(policy, value_net, batch, cfg)
                    flat[idx] = orig
                fd = (lp.item() - lm.item()) / (2 * h)
                an = grad[idx].item()
                scale = max(abs(fd), abs(an), 1e-8)
                assert abs(fd - an) / scale < 1e-4, (fd, an)
                checked += 1
        assert checked >= 20


class TestNormalizers:
    def test_obs_normalizer_matches_full_batch_stats(self):
        rng = np.random.default_rng(0)
        norm = ObsNormalizer(4)
        chunks = [rng.normal(loc=2.0, scale=3.0, size=(n, 4))
                  for n in (7, 50, 128, 3)]
        for c in chunks:
            norm.update(c)
        all_x = np.concatenate(chunks, axis=0)
        # the 1e-4 initialization count leaves a ~1e-6 relative prior bias
        np.testing.assert_allclose(norm.mean, all_x.mean(axis=0), rtol=1e-5,
                                   atol=1e-5)
        np.testing.assert_allclose(norm.var, all_x.var(axis=0), rtol=1e-5,
                                   atol=1e-5)

    def test_obs_normalizer_clips(self):
        norm = ObsNormalizer(2)
        norm.update(np.random.default_rng(0).normal(size=(100, 2)))
        out = norm.normalize(np.full((1, 2), 1e9))
        np.testing.assert_allclose(out, 10.0, atol=0)

    def test_obs_normalizer_state_round_trip(self):
        norm = ObsNormalizer(3)
        norm.update(np.random.default_rng(1).normal(size=(64, 3)))
        clone = ObsNormalizer.from_state(norm.state())
        x = np.random.default_rng(2).normal(size=(5, 3))
        np.testing.assert_allclose(clone.normalize(x), norm.normalize(x), atol=0)

    def test_return_scaler_recursion_and_round_trip(self):
        sc = ReturnScaler(gamma=0.9)
        r1 = np.array([1.0, 2.0])
        sc.update(r1, np.array([False, False]))
        np.testing.assert_allclose(sc.ret, r1, atol=0)
        r2 = np.array([0.5, -1.0])
        sc.update(r2, np.array([False, True]))
        np.testing.assert_allclose(sc.ret, [1.0 * 0.9 + 0.5, -1.0], atol=1e-15)
        clone = ReturnScaler.from_state(sc.state())
        x = np.array([3.0, 4.0])
        np.testing.assert_allclose(clone.scale(x), sc.scale(x), atol=0)


class TestCheckpoints:
    def test_round_trip_preserves_everything(self, tmp_path):
        policy = PolicyNet(6, 3, widths=(32, 16), log_std_init=-1.0,
                           log_std_min=-1.4, log_std_max=0.3)
        value_net = ValueNet(6, widths=(32, 16))
        norm = ObsNormalizer(6)
        norm.update(np.random.default_rng(0).normal(size=(50, 6)))
        path = tmp_path / "ck.pt"
        save_checkpoint(path, policy, value_net, norm, ActionSpaceKind.MI_JP,
                        extra={"note": 1})
        blob = load_checkpoint(path)
        assert blob["space"] == "mi-jp"
        assert blob["note"] == 1
        assert blob["policy_net"].log_std_min == pytest.approx(-1.4)
        assert blob["policy_net"].log_std_max == pytest.approx(0.3)
        obs = torch.randn(4, 6, dtype=torch.float64)
        mu0, ls0 = policy.dist_params(obs)
        mu1, ls1 = blob["policy_net"].dist_params(obs)
        torch.testing.assert_close(mu0, mu1, atol=0, rtol=0)
        torch.testing.assert_close(ls0, ls1, atol=0, rtol=0)
        torch.testing.assert_close(value_net(obs), blob["value_net"](obs),
                                   atol=0, rtol=0)
        x = np.random.default_rng(1).normal(size=(3, 6))
        np.testing.assert_allclose(blob["normalizer"].normalize(x),
                                   norm.normalize(x), atol=0)

    def test_version_gate(self, tmp_path):
        path = tmp_path / "bad.pt"
        torch.save({"version": 999}, str(path))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)


class TestTrainLoop:
    def test_smoke_writes_artifacts_and_resumes(self, tmp_path):
        task = load_task("reach")
        cfg = PPOConfig(n_envs=2, rollout=8, total_steps=32, minibatch=16,
                        epochs=2, eval_every=2, eval_grid=(2, 2, 1))
        out = tmp_path / "run"
        res = train(task, ActionSpaceKind.JV, cfg, seed=0, out_dir=out, quiet=True)
        assert res.env_steps == 32
        assert res.iterations == 2
        assert (out / "curve.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "checkpoint_last.pt").exists()
        assert (out / "checkpoint_best.pt").exists()
        header = (out / "curve.csv").read_text().splitlines()[0]
        assert header.startswith("iteration,env_steps,er_mean")

        # completed run: resume returns without stepping further
        res2 = train(task, ActionSpaceKind.JV, cfg, seed=0, out_dir=out, quiet=True)
        assert res2.env_steps == 32

        # raising the budget continues from the stored iteration
        cfg3 = PPOConfig(n_envs=2, rollout=8, total_steps=48, minibatch=16,
                         epochs=2, eval_every=2, eval_grid=(2, 2, 1))
        res3 = train(task, ActionSpaceKind.JV, cfg3, seed=0, out_dir=out, quiet=True)
        assert res3.env_steps == 48

    def test_policy_fn_deterministic_and_bounded(self):
        policy = PolicyNet(12, 3)
        norm = ObsNormalizer(12)
        act = policy_fn_from(policy, norm)
        obs = np.random.default_rng(0).normal(size=(4, 12))
        a1, a2 = act(obs), act(obs)
        np.testing.assert_allclose(a1, a2, atol=0)
        assert np.all(np.abs(a1) < 1.0)

    def test_evaluate_sr_zero_policy(self):
        model = load_robot("planar3")
        task = load_task("reach")
        space = ActionSpaceConfig.build(ActionSpaceKind.JV, model)

        def act(obs):
            return np.zeros((obs.shape[0], 3))

        sr, acc, er = evaluate_sr(model, task, space, act, (2, 2, 1))
        assert sr == 0.0
        assert acc > 0.05        # resting tool sits away from every grid goal
        assert np.isfinite(er)
